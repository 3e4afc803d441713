#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::flattening::FlatteningPlan;

fuzz_target!(|data: &[u8]| {
    if let Ok(plan) = serde_json::from_slice::<FlatteningPlan>(data) {
        assert_eq!(plan.b().len(), plan.n());
        if plan.flat_size() > 0 {
            assert!(plan.element_of(plan.flat_size() - 1) < plan.n());
        }
    }
});
