#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::harness::parse_samples;

// The first byte picks the domain size, the rest is the file.
fuzz_target!(|data: &[u8]| {
    let Some((&n, body)) = data.split_first() else { return };
    let n = n as usize + 1;
    if let Ok(table) = parse_samples(body, n) {
        assert!(table.values.iter().all(|&x| x < n));
        assert_eq!(table.counts(n).total() as usize, table.len());
    }
});
