#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::harness::parse_json_report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_json_report(text);
});
