//! Replays the checked-in fuzz corpus through the decoders. Seeds named
//! `ok_*` must decode, `bad_*` must be rejected with an error.

use std::path::{Path, PathBuf};

use eadmnc::config::validate_config_str;
use eadmnc::data::{load_dataset_from_reader, CategoricalFeature, Schema};
use eadmnc::detector::AdmncModel;
use eadmnc::tree::SurrogateTree;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn expect(name: &str, ok: bool) {
    if name.starts_with("ok") {
        assert!(ok, "{name} should decode");
    } else if name.starts_with("bad") {
        assert!(!ok, "{name} should be rejected");
    }
}

#[test]
fn load_csv_seeds() {
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
    for (name, data) in seeds("load_csv") {
        let schema = if name.contains("frozen") { &frozen } else { &open };
        let r = load_dataset_from_reader(data.as_slice(), schema, &name);
        if let Ok(ds) = &r {
            assert!(ds.records.iter().all(|rec| rec.check(&ds.schema).is_ok()));
        }
        expect(&name, r.is_ok());
    }
}

#[test]
fn schema_json_seeds() {
    for (name, data) in seeds("schema_json") {
        let r = Schema::from_json_str(&String::from_utf8_lossy(&data));
        if let Ok(s) = &r {
            assert_eq!(&Schema::from_json_str(&s.to_json_string()).unwrap(), s);
        }
        expect(&name, r.is_ok());
    }
}

#[test]
fn model_bundle_seeds() {
    for (name, data) in seeds("model_bundle") {
        let r = AdmncModel::from_json_str(&String::from_utf8_lossy(&data));
        if let Ok(m) = &r {
            assert_eq!(AdmncModel::from_json_str(&m.to_json_string()).unwrap().to_json_string(), m.to_json_string());
        }
        expect(&name, r.is_ok());
    }
}

#[test]
fn run_config_seeds() {
    for (name, data) in seeds("run_config") {
        let r = validate_config_str(&String::from_utf8_lossy(&data), &name, None);
        if let Ok(c) = &r {
            assert_eq!(&validate_config_str(&c.to_json_string(), &name, None).unwrap(), c);
        }
        expect(&name, r.is_ok());
    }
}

#[test]
fn tree_json_seeds() {
    for (name, data) in seeds("tree_json") {
        let r = SurrogateTree::from_json_str(&String::from_utf8_lossy(&data));
        if let Ok(t) = &r {
            let _ = eadmnc::explain::render_dot(t, None);
        }
        expect(&name, r.is_ok());
    }
}
