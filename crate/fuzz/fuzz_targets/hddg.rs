#![no_main]

use hdd_core::Grid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(g) = Grid::from_hddg_bytes(data) else {
        return;
    };
    let bytes = g.to_hddg_bytes().expect("decoded grid re-encodes");
    let again = Grid::from_hddg_bytes(&bytes).expect("re-encoded grid decodes");
    assert_eq!(again.to_hddg_bytes().unwrap(), bytes);
});
