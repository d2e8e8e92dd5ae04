use super::*;
use crate::categorical::{CategoricalModel, Layout};
use crate::data::{generate_synthetic, split, CategoricalFeature, FeatureStats, Label, Standardization};
use crate::detector::{fit, rank_estimators, DetectorConfig, Thresholds};
use crate::gmm::GmmParams;
use crate::tree::{build_full_tree, prune, Split, TreeConfig, TreeNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn leaf(id: usize, count: usize, mean: f64, depth: usize) -> TreeNode {
    TreeNode {
        id,
        count,
        mean,
        variance: 0.0,
        num_vars: depth,
        split: None,
        left: None,
        right: None,
    }
}

fn single_leaf_tree(schema: &Schema, mean: f64) -> SurrogateTree {
    SurrogateTree {
        root: leaf(0, 10, mean, 0),
        thresholds: Thresholds { adt: 0.05, ndt: 0.3 },
        config: TreeConfig::default(),
        total_count: 10,
        schema: schema.clone(),
        standardization: None,
    }
}

/// Two binary categorical features and one continuous feature, with
/// weights chosen so the record below has term estimators 0.322 and 0.357
/// on its active bits and the second one is dominated by the continuous
/// addend.
fn appendix_fixture() -> (AdmncModel, MixedRecord) {
    let binary = || vec!["0.0".to_string(), "1.0".to_string()];
    let schema = Schema::new(
        vec!["channel_V5_amplitude_Rwave".into()],
        vec![
            CategoricalFeature::new("Existence of ragged T wave", binary()),
            CategoricalFeature::new("Existence of ragged P wave", binary()),
        ],
        None,
    )
    .unwrap();
    let x = -0.525;
    let w_cont = 2.0;
    let w0 = -1.2;
    let bias = logit(0.322) - w_cont * x - w0;
    let w2 = logit(0.357) - w_cont * x - bias;
    assert!(w2 > w_cont * x, "continuous addend must dominate term 2");
    let w = vec![w_cont, bias, w0, -2.0, w2, -2.0];
    let gmm = GmmParams::new(
        vec![0.5, 0.5],
        vec![vec![40.0], vec![60.0]],
        vec![vec![1.0], vec![1.0]],
    )
    .unwrap();
    let model = AdmncModel {
        schema,
        stats: Standardization {
            stats: vec![FeatureStats { mean: 0.0, std: 1.0 }],
        },
        gmm: Some(gmm),
        w: CategoricalModel::new(Layout::new(1, 4), w).unwrap(),
        anomaly_threshold: 0.0,
        log_pdf_threshold: -20.0,
        thresholds: Thresholds { adt: 0.05, ndt: 0.3 },
        config: DetectorConfig::default(),
        seed: 0,
    };
    let r = MixedRecord::new(vec![x], vec![Some(0), Some(0)], Some(Label::Anomalous));
    (model, r)
}

#[test]
fn appendix_findings() {
    let (model, r) = appendix_fixture();
    let f = categorical_findings(&model, &r, &ExplainConfig::default()).unwrap();
    assert_eq!(f.len(), 2);
    assert!((f[0].estimator - 0.322).abs() < 1e-12);
    assert!((f[1].estimator - 0.357).abs() < 1e-12);
    assert_eq!(f[0].feature, "Existence of ragged T wave");
    assert!(f[0].involved_continuous.is_none());
    let c = f[1].involved_continuous.as_ref().unwrap();
    assert_eq!(c.feature, "channel_V5_amplitude_Rwave");
    assert_eq!(c.value, -0.525);
}

#[test]
fn appendix_report_text() {
    let (model, r) = appendix_fixture();
    let tree = single_leaf_tree(&model.schema, 0.2);
    let report = explain(&model, &tree, 0, 6, &r, &ExplainConfig::default()).unwrap();
    assert_eq!(report.kind, ReportKind::Combined);
    let expected = "Detected anomaly N(6):\n\
* Explanation:\n\
-> (1) It is an anomaly since the continuous sample is clearly separated from learned groups.\n\
-> (2) The model considers improbable that a normal sample could have in the categorical feature \"Existence of ragged T wave\" a value of 0.0\n\
-> (2) The model considers improbable that a normal sample could have in the categorical feature \"Existence of ragged P wave\" a value of 0.0 knowing the continuous value of -0.525 in the feature \"channel_V5_amplitude_Rwave\".";
    assert_eq!(report.summary_text, expected);

    let html = render_html(&[report]);
    for needle in [
        "Continuous vector details (1)",
        "Predicted Gaussian (class): 0",
        "First rule is fired -- It is an anomaly since continuous sample is clearly separated from learned groups.",
        "pdf(class=0) = ",
        "pdf(class=1) = ",
        "Categorical vector details (2)",
        "Logistic estimator: ",
        "Average categorical estimator: ",
        "Number of categorical estimators detected below anomalous threshold: 2",
        "[1/2] Categorical estimator value: 0.322",
        "[2/2] Categorical estimator value: 0.357",
        "[2/2] Involved continuous feature \"channel_V5_amplitude_Rwave\" with value -0.525.",
    ] {
        assert!(html.contains(needle), "missing {needle:?}");
    }
}

#[test]
fn no_findings_above_filter() {
    let (model, r) = appendix_fixture();
    let cfg = ExplainConfig {
        t_filter: 0.3,
        ..ExplainConfig::default()
    };
    assert!(categorical_findings(&model, &r, &cfg).unwrap().is_empty());
}

#[test]
fn filtered_count_grows_with_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut model, r) = appendix_fixture();
    for _ in 0..50 {
        for v in model.w.w.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        let mut prev = 0;
        for k in 1..100 {
            let cfg = ExplainConfig {
                t_filter: f64::from(k) / 100.0,
                ..ExplainConfig::default()
            };
            let n = categorical_findings(&model, &r, &cfg).unwrap().len();
            assert!(n >= prev);
            prev = n;
        }
    }
}

#[test]
fn sorted_list_is_ascending() {
    let (model, r) = appendix_fixture();
    let x = model.standardized_x(&r);
    let y = one_hot(&r, &model.schema).unwrap();
    let e = sorted_estimators(&model, &x, &y).unwrap();
    assert_eq!(e.len(), 4);
    assert!(e.windows(2).all(|w| w[0].0 <= w[1].0));
}

#[test]
fn attribution_stable_under_feature_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
    let schema_for = |order: &[usize]| {
        Schema::new(
            order.iter().map(|&i| names[i].clone()).collect(),
            vec![CategoricalFeature::new("c", vec!["a".into(), "b".into(), "z".into()])],
            None,
        )
        .unwrap()
    };
    for _ in 0..100 {
        let w_cont: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rest: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let level = rng.random_range(0..3u32);
        let attributed = |order: &[usize]| {
            let mut w: Vec<f64> = order.iter().map(|&i| w_cont[i]).collect();
            w.extend_from_slice(&rest);
            let (mut model, _) = appendix_fixture();
            model.schema = schema_for(order);
            model.stats = Standardization {
                stats: vec![FeatureStats { mean: 0.0, std: 1.0 }; 4],
            };
            model.gmm = None;
            model.w = CategoricalModel::new(Layout::new(4, 3), w).unwrap();
            let r = MixedRecord::new(order.iter().map(|&i| x[i]).collect(), vec![Some(level)], None);
            let cfg = ExplainConfig {
                t_filter: 0.99,
                ..ExplainConfig::default()
            };
            categorical_findings(&model, &r, &cfg)
                .unwrap()
                .into_iter()
                .map(|f| (f.j, f.involved_continuous.map(|c| c.feature)))
                .collect::<Vec<_>>()
        };
        assert_eq!(attributed(&[0, 1, 2, 3]), attributed(&[3, 1, 0, 2]));
    }
}

#[test]
fn rules_at_component_mean() {
    let (mut model, _) = appendix_fixture();
    model.gmm = Some(
        GmmParams::new(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]], vec![vec![1.0], vec![1.0]]).unwrap(),
    );
    let v = continuous_rules(&model, &[-2.0], &ExplainConfig::default()).unwrap();
    assert!(v.iter().all(|v| !v.fired && v.evidence.is_none()));
}

#[test]
fn rule_one_fires_far_away() {
    let (model, _) = appendix_fixture();
    let v = continuous_rules(&model, &[-0.525], &ExplainConfig::default()).unwrap();
    assert!(v[0].fired);
    match &v[0].evidence {
        Some(Evidence::LogPdfs(l)) => assert_eq!(l.len(), 2),
        other => panic!("unexpected evidence {other:?}"),
    }
    assert!(!v[1].fired);
}

#[test]
fn explicit_density_threshold_overrides_stored() {
    let (mut model, _) = appendix_fixture();
    model.gmm = Some(
        GmmParams::new(vec![0.5, 0.5], vec![vec![0.0], vec![3.0]], vec![vec![1.0], vec![1.0]]).unwrap(),
    );
    assert!(!continuous_rules(&model, &[1.5], &ExplainConfig::default()).unwrap()[0].fired);
    let cfg = ExplainConfig {
        pdf_threshold: Some(0.5),
        ..ExplainConfig::default()
    };
    assert!(continuous_rules(&model, &[1.5], &cfg).unwrap()[0].fired);
}

#[test]
fn rule_two_tiny_component() {
    let (mut model, _) = appendix_fixture();
    model.gmm = Some(
        GmmParams::new(vec![0.995, 0.005], vec![vec![0.0], vec![10.0]], vec![vec![1.0], vec![1.0]]).unwrap(),
    );
    let v = continuous_rules(&model, &[10.0], &ExplainConfig::default()).unwrap();
    assert!(v[1].fired);
    assert_eq!(
        v[1].evidence,
        Some(Evidence::ComponentShare {
            component: 1,
            weight: 0.005
        })
    );
}

#[test]
fn unflagged_record_is_refused() {
    let (mut model, r) = appendix_fixture();
    model.anomaly_threshold = f64::NEG_INFINITY;
    let tree = single_leaf_tree(&model.schema, 0.2);
    assert!(matches!(
        explain(&model, &tree, 3, 1, &r, &ExplainConfig::default()),
        Err(Error::NotFlagged { index: 3 })
    ));
}

#[test]
fn single_leaf_transcription() {
    let (model, r) = appendix_fixture();
    let tree = single_leaf_tree(&model.schema, 0.01);
    let p = transcribe(&tree, &r).unwrap();
    assert!(p.conditions.is_empty());
    assert_eq!(p.leaf_share, 1.0);
    let report = explain(&model, &tree, 0, 1, &r, &ExplainConfig::default()).unwrap();
    assert_eq!(report.kind, ReportKind::Path);
    assert!(transcribe(&single_leaf_tree(&model.schema, 0.2), &r).is_err());
}

fn path_fixture() -> SurrogateTree {
    // 12500 records; the explained leaf holds 138 of them
    let schema = Schema::new(
        vec!["Down/Up Ratio".into(), "Flow IAT Mean".into()],
        vec![CategoricalFeature::new("proto", vec!["tcp".into(), "udp".into(), "icmp".into()])],
        None,
    )
    .unwrap();
    let mut root = leaf(0, 12500, 0.2, 0);
    let mut mid = leaf(1, 1000, 0.05, 1);
    let mut right = leaf(4, 11500, 0.29, 1);
    right.split = Some(Split {
        feature: 2,
        kind: SplitKind::Categorical { left_levels: vec![1] },
    });
    right.left = Some(Box::new(leaf(5, 500, 0.2, 2)));
    right.right = Some(Box::new(leaf(6, 11000, 0.3, 2)));
    mid.split = Some(Split {
        feature: 1,
        kind: SplitKind::Continuous { threshold: 13729.4994 },
    });
    mid.left = Some(Box::new(leaf(2, 138, 0.01, 2)));
    mid.right = Some(Box::new(leaf(3, 862, 0.06, 2)));
    root.split = Some(Split {
        feature: 0,
        kind: SplitKind::Continuous { threshold: 0.5 },
    });
    root.left = Some(Box::new(mid));
    root.right = Some(Box::new(right));
    root.variance = 0.01;
    let tree = SurrogateTree {
        root,
        thresholds: Thresholds { adt: 0.05, ndt: 0.3 },
        config: TreeConfig::default(),
        total_count: 12500,
        schema,
        standardization: None,
    };
    SurrogateTree::from_json_str(&tree.to_json_string()).unwrap()
}

#[test]
fn path_text_format() {
    let tree = path_fixture();
    let r = MixedRecord::new(vec![0.25, 900.0], vec![Some(0)], None);
    let p = transcribe(&tree, &r).unwrap();
    assert_eq!(p.conditions.len(), 2);
    assert!(p.conditions.iter().all(|c| c.holds(&r, &tree.schema)));
    let report = Report {
        index: 0,
        rank: 1,
        kind: ReportKind::Path,
        score: AnomalyScore::new(-1.0, -1.0),
        path: Some(p),
        verdicts: vec![],
        findings: vec![],
        details: None,
        summary_text: String::new(),
    };
    assert_eq!(
        render::summary(&report),
        "Positive anomaly detection N(1).\n\
* Explanation:\n\
--> Feature \"Down/Up Ratio\" <= 0.5\n\
--> Feature \"Flow IAT Mean\" <= 13729.499\n\
* These features place the item in a cluster containing 1.104%"
    );
}

#[test]
fn categorical_conditions_replay() {
    let tree = path_fixture();
    for levels in [Some(0), Some(1), Some(2), None] {
        let r = MixedRecord::new(vec![3.0, 0.0], vec![levels], None);
        let p = path_conditions(&tree, &r);
        assert!(p.conditions.iter().all(|c| c.holds(&r, &tree.schema)), "{levels:?}");
        let expected_leaf = if levels == Some(1) { 5 } else { 6 };
        assert_eq!(p.leaf_id, expected_leaf);
    }
}

#[test]
fn fitted_paths_replay_true() {
    let ds = generate_synthetic(3000, 3, 3, 2, 0.05, 8).unwrap();
    let (train, test) = split(&ds, 0.7, 2).unwrap();
    let model = fit(&train, &DetectorConfig::default(), Thresholds::default(), 1).unwrap();
    let scores = model.score_dataset(&test).unwrap();
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let targets = rank_estimators(&totals, model.thresholds.ndt);
    let tree = build_full_tree(&test, &targets, model.thresholds, &TreeConfig::default()).unwrap();
    for r in &test.records {
        let p = path_conditions(&tree, r);
        assert!(p.conditions.iter().all(|c| c.holds(r, &test.schema)));
    }
    let reports = explain_top(&model, &tree, &test.records, &scores, &ExplainConfig::default()).unwrap();
    let flagged = scores.iter().filter(|s| model.is_flagged(s)).count();
    assert_eq!(reports.len(), flagged.min(400));
    for (k, rep) in reports.iter().enumerate() {
        assert_eq!(rep.rank, k + 1);
        assert_eq!(rep.kind == ReportKind::Path, rep.path.is_some());
    }
}

#[test]
fn html_escapes_feature_names() {
    let (mut model, r) = appendix_fixture();
    model.schema.categorical[0].name = "a<b & \"c\"".into();
    let tree = single_leaf_tree(&model.schema, 0.2);
    let report = explain(&model, &tree, 0, 1, &r, &ExplainConfig::default()).unwrap();
    let html = render_html(&[report]);
    assert!(!html.contains("a<b"));
    assert!(html.contains("a&lt;b &amp;"));
    let decoded = html_escape::decode_html_entities(&html);
    assert!(decoded.contains("categorical feature \"a<b & \"c\"\" has a value of 0.0"));
}

#[test]
fn empty_html_document() {
    let html = render_html(&[]);
    assert!(html.starts_with("<!DOCTYPE html>"));
    assert!(html.trim_end().ends_with("</html>"));
    assert!(!html.contains("<section"));
}

#[test]
fn dot_single_leaf() {
    let (model, _) = appendix_fixture();
    let dot = render_dot(&single_leaf_tree(&model.schema, 0.0), None);
    assert_eq!(dot.lines().filter(|l| l.trim_start().starts_with('n') && l.contains("[label=")).count(), 1);
    assert!(!dot.contains("->"));
    // mean 0 sits at the dark end of the anomalous band
    assert!(dot.contains("fillcolor=\"#b2182b\""));
}

#[test]
fn dot_golden() {
    let full = path_fixture();
    let pruned = prune(&full, 1.0);
    assert!(pruned.root.is_leaf());
    let mut partly = full.clone();
    partly.root.right.as_mut().unwrap().split = None;
    partly.root.right.as_mut().unwrap().left = None;
    partly.root.right.as_mut().unwrap().right = None;
    let dot = render_dot(&full, Some(&partly));
    if std::env::var_os("EADMNC_BLESS").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_tree.dot"), &dot).unwrap();
    }
    let golden = include_str!("../../tests/data/golden_tree.dot");
    assert_eq!(dot, golden);
}
