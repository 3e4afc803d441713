#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::harness::parse_counts;

// The first byte picks the domain size, the rest is the file.
fuzz_target!(|data: &[u8]| {
    let Some((&n, body)) = data.split_first() else { return };
    let n = n as usize + 1;
    if let Ok(counts) = parse_counts(body, n) {
        assert_eq!(counts.len(), n);
    }
});
