#![no_main]

use eadmnc::config::validate_config_str;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = validate_config_str(text, "fuzz", None) {
        let again = validate_config_str(&cfg.to_json_string(), "fuzz", None).expect("re-parse");
        assert_eq!(cfg, again);
    }
});
