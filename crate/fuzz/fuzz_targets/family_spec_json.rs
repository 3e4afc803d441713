#![no_main]

use libfuzzer_sys::fuzz_target;
use multisrc::families::FamilySpec;

/// Generation allocates `n·s` cells (de Finetti derives `s` from `n`), so only small specs are built.
const MAX_N: usize = 1024;
const MAX_CELLS: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<FamilySpec>(data) {
        if spec.n <= MAX_N && spec.n.saturating_mul(spec.s.max(1)) <= MAX_CELLS {
            let _ = spec.generate();
        }
    }
});
