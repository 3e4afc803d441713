#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::Distribution;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = serde_json::from_slice::<Distribution>(data) {
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Distribution>(&text).unwrap(), p);
    }
});
