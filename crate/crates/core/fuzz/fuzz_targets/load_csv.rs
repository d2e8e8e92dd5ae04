#![no_main]

use eadmnc::data::{load_dataset_from_reader, CategoricalFeature, Schema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let open = Schema::new(
        vec!["x0".into(), "x1".into()],
        vec![CategoricalFeature::new("c0", vec![])],
        Some("label".into()),
    )
    .unwrap();
    let frozen = Schema::new(
        vec!["x0".into()],
        vec![CategoricalFeature::new("c0", vec!["L0".into(), "L1".into()])],
        None,
    )
    .unwrap();
    for schema in [&open, &frozen] {
        if let Ok(ds) = load_dataset_from_reader(data, schema, "fuzz") {
            assert!(ds.records.iter().all(|r| r.check(&ds.schema).is_ok()));
        }
    }
});
