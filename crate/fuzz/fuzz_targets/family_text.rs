#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::SourceFamily;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mut fam) = SourceFamily::parse_text(text) {
        let back = SourceFamily::parse_text(&fam.to_text()).unwrap();
        assert_eq!(back.sources(), fam.sources());
        let _ = fam.verify();
    }
});
