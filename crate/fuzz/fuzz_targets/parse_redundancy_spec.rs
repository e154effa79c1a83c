#![no_main]

use libfuzzer_sys::fuzz_target;
use qrqueue::oiqueue::{redundancy_to_oi, RedundancySpec};
use qrqueue::qrcore::Macrostate;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = RedundancySpec::from_json(text) {
        let oi = redundancy_to_oi(&spec);
        let _ = oi.mu(&Macrostate::zeros(spec.n_classes()).plus(0));
    }
});
