#![no_main]

use libfuzzer_sys::fuzz_target;
use qrqueue::oiqueue::Word;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = Word::parse(text) {
        if w.letters().iter().all(|&l| l < 9) {
            assert_eq!(Word::parse(&w.to_string()).expect("round trip parses"), w);
        }
    }
});
