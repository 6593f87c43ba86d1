#![no_main]

use hdd_core::footprint::parse_factors;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(f) = parse_factors(text) {
            f.validate().expect("parsed factors are valid");
        }
    }
});
