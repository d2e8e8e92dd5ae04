#![no_main]

use eadmnc::data::MixedRecord;
use eadmnc::detector::AdmncModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = AdmncModel::from_json_str(text) {
        let r = MixedRecord::new(
            vec![0.0; model.schema.continuous_dim()],
            vec![None; model.schema.categorical_dim()],
            None,
        );
        let _ = model.score(&r);
        AdmncModel::from_json_str(&model.to_json_string()).expect("re-parse");
    }
});
