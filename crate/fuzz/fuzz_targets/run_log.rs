#![no_main]

use hdd_core::footprint::{parse_run_log, run_emissions, EmissionFactors};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(log) = parse_run_log(text) {
        if let Ok(kg) = run_emissions(&log, &EmissionFactors::default(), 0.0) {
            assert!(kg >= 0.0);
        }
    }
});
