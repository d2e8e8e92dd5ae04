#![no_main]

use eadmnc::data::MixedRecord;
use eadmnc::explain::render_dot;
use eadmnc::tree::SurrogateTree;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tree) = SurrogateTree::from_json_str(text) {
        let r = MixedRecord::new(
            vec![0.0; tree.schema.continuous_dim()],
            vec![None; tree.schema.categorical_dim()],
            None,
        );
        let _ = tree.predict(&r);
        let _ = render_dot(&tree, None);
    }
});
