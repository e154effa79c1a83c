#![no_main]

use libfuzzer_sys::fuzz_target;
use qrqueue::whittle::{solve_traffic, WhittleConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = WhittleConfig::from_json(text) {
        let _ = solve_traffic(&spec);
    }
});
