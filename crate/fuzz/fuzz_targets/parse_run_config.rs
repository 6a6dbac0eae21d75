#![no_main]

use libfuzzer_sys::fuzz_target;
use planescale::config::parse_run_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_run_config(text) {
        let encoded = serde_json::to_string(&cfg).expect("config serializes");
        assert_eq!(parse_run_config(&encoded).expect("round trip"), cfg);
    }
});
