#![no_main]

use libfuzzer_sys::fuzz_target;
use qrqueue::balance::{decompose_vertex, policy_from_balance, BalanceFunction};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(gamma) = BalanceFunction::from_json(text) {
        let again = BalanceFunction::from_json(&gamma.to_json()).expect("round trip parses");
        assert_eq!(again.domain(), gamma.domain());
        let _ = policy_from_balance(&gamma);
        if gamma.domain().len() <= 256 {
            let _ = decompose_vertex(&gamma);
        }
    }
});
