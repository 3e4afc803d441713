#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::Distribution;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = Distribution::parse_text(text) {
        assert_eq!(Distribution::parse_text(&p.to_text()).unwrap(), p);
    }
});
