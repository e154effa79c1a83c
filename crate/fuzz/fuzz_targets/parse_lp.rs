#![no_main]

use std::collections::BTreeMap;

use libfuzzer_sys::fuzz_target;
use qrqueue::control::LpProblem;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lp) = LpProblem::parse(text) {
        let zeros: BTreeMap<String, f64> = lp.variables().into_iter().map(|v| (v, 0.0)).collect();
        let _ = lp.objective_value(&zeros);
        let _ = lp.max_violation(&zeros);
    }
});
