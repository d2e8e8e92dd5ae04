#![no_main]

use eadmnc::data::Schema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(schema) = Schema::from_json_str(text) {
        let again = Schema::from_json_str(&schema.to_json_string()).expect("re-parse");
        assert_eq!(schema, again);
    }
});
