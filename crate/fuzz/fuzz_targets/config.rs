#![no_main]

use hdd_cli::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = Config::parse_str(text) {
        let again = Config::parse_str(&c.to_text()).expect("printed config parses");
        assert_eq!(again.to_text(), c.to_text());
    }
});
