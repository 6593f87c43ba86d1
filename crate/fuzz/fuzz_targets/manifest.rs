#![no_main]

use hdd_core::synth::{manifest_csv, parse_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entries) = parse_manifest(text) {
        assert_eq!(parse_manifest(&manifest_csv(&entries)).unwrap(), entries);
    }
});
