//! Command stages of the `eadmnc` binary.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_dataset, write_dataset_csv, Dataset, Label, Schema};
use crate::detector::{fit, write_scores_csv, AdmncModel};
use crate::error::{Error, Result};
use crate::eval::{render_eval_text, run_protocol, write_eval_csv, write_text};
use crate::explain::{explain_top, render_dot, render_html, render_text, write_reports_json};
use crate::tree::{build_full_tree, prune, quality, ComplexityMetrics, SurrogateTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Score,
    Explain,
    Tree,
    Synth,
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Score => "score",
            Command::Explain => "explain",
            Command::Tree => "tree",
            Command::Synth => "synth",
            Command::Eval => "eval",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Command::Score | Command::Explain | Command::Tree)
    }
}

/// A failed stage: configuration problems map to exit code 2, the rest to 1.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::Config { .. } => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|error| StageError { stage: name, error })
}

/// Input files each command reads must exist before anything runs.
pub fn check_inputs(cfg: &RunConfig, command: Command) -> Result<()> {
    let mut problems = Vec::new();
    let mut need = |field: &str, path: &Path| {
        if !path.is_file() {
            problems.push(format!("{field}: file not found: {}", path.display()));
        }
    };
    if command != Command::Synth {
        need("schema", &cfg.schema);
        need("dataset", &cfg.dataset);
    }
    if command.needs_model() {
        need("model", &cfg.model_path());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config {
            source_name: "inputs".into(),
            problems,
        })
    }
}

/// Files a successful run of `command` leaves in the output directory.
pub fn artifacts(cfg: &RunConfig, command: Command) -> Vec<PathBuf> {
    let out = |f: &str| cfg.output_dir.join(f);
    let mut v = vec![out("effective_config.json")];
    match command {
        Command::Train => v.push(cfg.model_path()),
        Command::Score => v.push(out("scores.csv")),
        Command::Explain => v.extend([out("explanations.txt"), out("report.html"), out("reports.json")]),
        Command::Tree => v.extend([
            out("tree.dot"),
            out("tree_pruned.dot"),
            out("tree.json"),
            out("tree_pruned.json"),
            out("complexity.json"),
        ]),
        Command::Synth => v.extend([cfg.dataset.clone(), cfg.schema.clone()]),
        Command::Eval => v.extend([out("eval_results.csv"), out("eval_results.txt")]),
    }
    v
}

/// Runs `command` and returns the artifacts it wrote.
pub fn run_pipeline(cfg: &RunConfig, command: Command) -> std::result::Result<Vec<PathBuf>, StageError> {
    stage("config", check_inputs(cfg, command))?;
    stage("config", cfg.write_snapshot())?;
    match command {
        Command::Train => train(cfg)?,
        Command::Score => score(cfg)?,
        Command::Explain => explain(cfg)?,
        Command::Tree => tree(cfg)?,
        Command::Synth => synth(cfg)?,
        Command::Eval => eval(cfg)?,
    }
    let written = artifacts(cfg, command);
    stage("verify", verify(&written))?;
    Ok(written)
}

fn verify(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "json" => {
                serde_json::from_str::<serde_json::Value>(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
            }
            "csv" => {
                let mut rd = csv::Reader::from_reader(text.as_bytes());
                for rec in rd.records() {
                    rec?;
                }
            }
            "dot" if !text.starts_with("digraph") => {
                return Err(Error::invalid("artifact", format!("{} is not a DOT graph", p.display())));
            }
            _ => {}
        }
    }
    Ok(())
}

fn load_schema(cfg: &RunConfig) -> std::result::Result<Schema, StageError> {
    stage("load", Schema::from_path(&cfg.schema))
}

fn load_model(cfg: &RunConfig) -> std::result::Result<(AdmncModel, Dataset), StageError> {
    let model = stage("load", AdmncModel::load(cfg.model_path()))?;
    let schema = load_schema(cfg)?;
    if !schema.is_compatible_with(&model.schema) {
        return Err(StageError {
            stage: "load",
            error: Error::Schema(format!(
                "{} does not match the schema stored in {}",
                cfg.schema.display(),
                cfg.model_path().display()
            )),
        });
    }
    let ds = stage("load", load_dataset(&cfg.dataset, &model.schema))?;
    Ok((model, ds))
}

fn train(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    let schema = load_schema(cfg)?;
    let ds = stage("load", load_dataset(&cfg.dataset, &schema))?;
    let normal: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.records[i].label != Some(Label::Anomalous))
        .collect();
    let train = ds.subset(&normal);
    log::info!("training on {} of {} records", train.len(), ds.len());
    let model = stage("train", fit(&train, &cfg.detector, cfg.thresholds, cfg.seed))?;
    stage("train", model.save(cfg.model_path()))
}

fn score(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    let (model, ds) = load_model(cfg)?;
    let scores = stage("score", model.score_dataset(&ds))?;
    let targets = stage("score", model.rank_estimators(&ds))?;
    stage(
        "score",
        write_scores_csv(cfg.output_dir.join("scores.csv"), &scores, &targets, model.anomaly_threshold),
    )
}

fn surrogate(model: &AdmncModel, ds: &Dataset, cfg: &RunConfig) -> std::result::Result<(SurrogateTree, SurrogateTree), StageError> {
    let targets = stage("tree", model.rank_estimators(ds))?;
    let full = stage("tree", build_full_tree(ds, &targets, model.thresholds, &cfg.tree))?;
    let pruned = prune(&full, cfg.lambda);
    Ok((full, pruned))
}

fn explain(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    let (model, ds) = load_model(cfg)?;
    let scores = stage("score", model.score_dataset(&ds))?;
    let (_, pruned) = surrogate(&model, &ds, cfg)?;
    let reports = stage("explain", explain_top(&model, &pruned, &ds.records, &scores, &cfg.explain))?;
    let out = &cfg.output_dir;
    stage("explain", write_text(&out.join("explanations.txt"), &render_text(&reports)))?;
    stage("explain", write_text(&out.join("report.html"), &render_html(&reports)))?;
    stage("explain", write_reports_json(out.join("reports.json"), &reports))
}

#[derive(Serialize)]
struct Complexity {
    full: ComplexityMetrics,
    pruned: ComplexityMetrics,
}

fn tree(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    let (model, ds) = load_model(cfg)?;
    let (full, pruned) = surrogate(&model, &ds, cfg)?;
    let out = &cfg.output_dir;
    let metrics = Complexity {
        full: quality(&full, cfg.lambda),
        pruned: quality(&pruned, cfg.lambda),
    };
    log::info!(
        "full tree: {} leaves, NV {}; pruned: {} leaves, NV {}",
        metrics.full.num_clusters,
        metrics.full.nv_total,
        metrics.pruned.num_clusters,
        metrics.pruned.nv_total
    );
    stage("tree", write_text(&out.join("tree.dot"), &render_dot(&full, None)))?;
    stage("tree", write_text(&out.join("tree_pruned.dot"), &render_dot(&full, Some(&pruned))))?;
    stage("tree", full.save(out.join("tree.json")))?;
    stage("tree", pruned.save(out.join("tree_pruned.json")))?;
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    stage("tree", write_text(&out.join("complexity.json"), &json))
}

fn synth(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    let s = &cfg.synth;
    let ds = stage(
        "synth",
        generate_synthetic(s.n, s.d_cont, s.d_cat, s.nv, s.anomaly_ratio, cfg.seed),
    )?;
    for p in [&cfg.dataset, &cfg.schema] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            stage("synth", std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)))?;
        }
    }
    stage("synth", write_dataset_csv(&ds, &cfg.dataset))?;
    stage("synth", ds.schema.write(&cfg.schema))
}

fn eval(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    let schema = load_schema(cfg)?;
    let ds = stage("load", load_dataset(&cfg.dataset, &schema))?;
    let runs = cfg.output_dir.join("runs");
    let row = stage(
        "eval",
        run_protocol(&cfg.dataset_name(), &ds, &cfg.protocol(), cfg.repetitions, cfg.seed, Some(&runs)),
    )?;
    let rows = [row];
    stage("eval", write_eval_csv(cfg.output_dir.join("eval_results.csv"), &rows))?;
    stage("eval", write_text(&cfg.output_dir.join("eval_results.txt"), &render_eval_text(&rows)))
}
