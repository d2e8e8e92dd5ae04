//! JSON run configuration for the command-line pipeline.
//!
//! ```json
//! {
//!   "dataset": "data.csv", "schema": "schema.json", "output_dir": "out",
//!   "seed": 0, "lambda": 0.0001,
//!   "detector": {"gmm": {"components": 2}, "sgd": {"epochs": 10}, "target_ratio": 0.05},
//!   "thresholds": {"adt": 0.05, "ndt": 0.3},
//!   "tree": {"l_max": 5, "bins": 40},
//!   "explain": {"t_filter": 0.4, "top_n": 400}
//! }
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, Thresholds};
use crate::error::{Error, Result};
use crate::eval::ProtocolConfig;
use crate::explain::ExplainConfig;
use crate::tree::TreeConfig;

/// Generator settings of the `synth` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d_cont: usize,
    pub d_cat: usize,
    pub nv: usize,
    pub anomaly_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 20_000,
            d_cont: 2,
            d_cat: 30,
            nv: 4,
            anomaly_ratio: 0.05,
        }
    }
}

/// The file as written; required fields may be absent.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfigFile {
    dataset: Option<PathBuf>,
    schema: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    model: Option<PathBuf>,
    name: Option<String>,
    seed: u64,
    workers: Option<usize>,
    lambda: Option<f64>,
    repetitions: Option<usize>,
    train_fraction: Option<f64>,
    detector: DetectorConfig,
    thresholds: Thresholds,
    tree: TreeConfig,
    explain: ExplainConfig,
    synth: SynthConfig,
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub output_dir: PathBuf,
    /// Model bundle; `output_dir/model.json` when absent.
    pub model: Option<PathBuf>,
    /// Dataset name in evaluation output; the dataset file stem when absent.
    pub name: Option<String>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub lambda: f64,
    pub repetitions: usize,
    pub train_fraction: f64,
    pub detector: DetectorConfig,
    pub thresholds: Thresholds,
    pub tree: TreeConfig,
    pub explain: ExplainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output_dir.join("model.json"))
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
        })
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            detector: self.detector.clone(),
            thresholds: self.thresholds,
            tree: self.tree,
            explain: self.explain.clone(),
            lambda: self.lambda,
            train_fraction: self.train_fraction,
        }
    }

    /// Pretty JSON that `validate_config_str` accepts back unchanged.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `effective_config.json` into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join("effective_config.json");
        std::fs::write(&path, self.to_json_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

struct Problems(Vec<String>);

impl Problems {
    fn check(&mut self, ok: bool, field: &str, msg: impl std::fmt::Display) {
        if !ok {
            self.0.push(format!("{field}: {msg}"));
        }
    }

    fn unit_open(&mut self, v: f64, field: &str) {
        self.check(v > 0.0 && v < 1.0, field, format!("{v} is outside (0, 1)"));
    }

    fn at_least(&mut self, v: usize, min: usize, field: &str) {
        self.check(v >= min, field, format!("{v} is below the minimum {min}"));
    }
}

fn field_problems(f: &RunConfigFile) -> Vec<String> {
    let mut p = Problems(Vec::new());
    p.check(f.dataset.is_some(), "dataset", "required field is missing");
    p.check(f.schema.is_some(), "schema", "required field is missing");
    p.check(f.output_dir.is_some(), "output_dir", "required field is missing");
    if let Some(w) = f.workers {
        p.at_least(w, 1, "workers");
    }
    if let Some(l) = f.lambda {
        p.check(l >= 0.0 && l.is_finite(), "lambda", format!("{l} must be finite and non-negative"));
    }
    if let Some(r) = f.repetitions {
        p.at_least(r, 1, "repetitions");
    }
    if let Some(t) = f.train_fraction {
        p.unit_open(t, "train_fraction");
    }

    let d = &f.detector;
    p.at_least(d.gmm.components, 1, "detector.gmm.components");
    p.check(
        d.gmm.subset_fraction > 0.0 && d.gmm.subset_fraction <= 1.0,
        "detector.gmm.subset_fraction",
        format!("{} is outside (0, 1]", d.gmm.subset_fraction),
    );
    p.at_least(d.gmm.max_iter, 1, "detector.gmm.max_iter");
    p.check(d.gmm.tol > 0.0, "detector.gmm.tol", "must be positive");
    p.check(
        d.sgd.learning_rate > 0.0 && d.sgd.learning_rate.is_finite(),
        "detector.sgd.learning_rate",
        "must be positive",
    );
    p.at_least(d.sgd.batch_size, 1, "detector.sgd.batch_size");
    p.at_least(d.sgd.epochs, 1, "detector.sgd.epochs");
    p.check(d.sgd.l2 >= 0.0 && d.sgd.l2.is_finite(), "detector.sgd.l2", "must be non-negative");
    p.check(
        (0.0..1.0).contains(&d.target_ratio),
        "detector.target_ratio",
        format!("{} is outside [0, 1)", d.target_ratio),
    );
    p.check(
        (0.0..1.0).contains(&d.pdf_quantile),
        "detector.pdf_quantile",
        format!("{} is outside [0, 1)", d.pdf_quantile),
    );

    let th = &f.thresholds;
    p.unit_open(th.adt, "thresholds.adt");
    p.check(th.ndt > 0.0 && th.ndt <= 1.0, "thresholds.ndt", format!("{} is outside (0, 1]", th.ndt));
    p.check(th.adt <= th.ndt, "thresholds.adt", format!("{} exceeds ndt {}", th.adt, th.ndt));

    p.at_least(f.tree.l_max, 1, "tree.l_max");
    p.at_least(f.tree.bins, 2, "tree.bins");
    p.at_least(f.tree.min_leaf, 1, "tree.min_leaf");

    let e = &f.explain;
    p.unit_open(e.t_filter, "explain.t_filter");
    p.unit_open(e.tiny_fraction, "explain.tiny_fraction");
    if let Some(v) = e.pdf_threshold {
        p.check(v > 0.0 && v.is_finite(), "explain.pdf_threshold", "must be a positive density");
    }
    p.at_least(e.top_n, 1, "explain.top_n");

    let s = &f.synth;
    p.at_least(s.n, 1, "synth.n");
    p.check(s.d_cont + s.d_cat > 0, "synth.d_cont", "d_cont + d_cat must be positive");
    p.check(
        s.nv <= s.d_cont + s.d_cat,
        "synth.nv",
        format!("{} exceeds the {} variables", s.nv, s.d_cont + s.d_cat),
    );
    p.check(
        (0.0..0.5).contains(&s.anomaly_ratio),
        "synth.anomaly_ratio",
        format!("{} is outside [0, 0.5)", s.anomaly_ratio),
    );
    p.check(
        s.anomaly_ratio == 0.0 || s.nv > 0,
        "synth.nv",
        "anomalies need at least one perturbed variable",
    );
    p.0
}

fn config_error(source: &str, problems: Vec<String>) -> Error {
    Error::Config {
        source_name: source.to_string(),
        problems,
    }
}

fn resolve(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

/// Parses and checks a config text. Relative paths are joined to `base`.
/// Every violated field is reported; an empty text counts as `{}`.
pub fn validate_config_str(text: &str, source: &str, base: Option<&Path>) -> Result<RunConfig> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: RunConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        config_error(source, vec![format!("{field}: {}", e.into_inner())])
    })?;
    let problems = field_problems(&file);
    if !problems.is_empty() {
        return Err(config_error(source, problems));
    }
    let defaults = ProtocolConfig::default();
    Ok(RunConfig {
        dataset: resolve(base, file.dataset.expect("checked")),
        schema: resolve(base, file.schema.expect("checked")),
        output_dir: resolve(base, file.output_dir.expect("checked")),
        model: file.model.map(|m| resolve(base, m)),
        name: file.name,
        seed: file.seed,
        workers: file.workers,
        lambda: file.lambda.unwrap_or(defaults.lambda),
        repetitions: file.repetitions.unwrap_or(5),
        train_fraction: file.train_fraction.unwrap_or(defaults.train_fraction),
        detector: file.detector,
        thresholds: file.thresholds,
        tree: file.tree,
        explain: file.explain,
        synth: file.synth,
    })
}

/// Reads and checks the config file at `path`.
pub fn validate_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(&path.display().to_string(), vec![format!("cannot read file: {e}")]))?;
    validate_config_str(&text, &path.display().to_string(), path.parent())
}

/// Applies command-line overrides and re-checks the overridden fields.
pub fn apply_overrides(
    mut cfg: RunConfig,
    seed: Option<u64>,
    workers: Option<usize>,
    lambda: Option<f64>,
) -> Result<RunConfig> {
    let mut p = Problems(Vec::new());
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        p.at_least(w, 1, "--workers");
        cfg.workers = Some(w);
    }
    if let Some(l) = lambda {
        p.check(l >= 0.0 && l.is_finite(), "--lambda", format!("{l} must be finite and non-negative"));
        cfg.lambda = l;
    }
    if p.0.is_empty() {
        Ok(cfg)
    } else {
        Err(config_error("command line", p.0))
    }
}
