//! Evaluation protocol: AUROC, surrogate error, complexity and explanation
//! coverage over repeated train/test splits.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, Label};
use crate::detector::{average_ranks, fit, rank_estimators, AdmncModel, AnomalyScore, DetectorConfig, Thresholds};
use crate::error::{Error, Result};
use crate::explain::{explain_top, render_dot, render_html, render_text, write_reports_json, ExplainConfig, Report, ReportKind};
use crate::tree::{build_full_tree, prune, quality, ComplexityMetrics, SurrogateTree, TreeConfig};

pub use crate::tree::tree_mse;

/// Probability that an anomalous record scores below a normal one. Ties
/// count one half.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let n_anom = labels.iter().filter(|l| l.is_anomalous()).count();
    let n_norm = labels.len() - n_anom;
    if n_anom == 0 || n_norm == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_anomalous())
        .map(|(r, _)| r)
        .sum();
    let n = n_norm as f64;
    Ok((rank_sum - n * (n + 1.0) / 2.0) / (n * n_anom as f64))
}

/// `(path reports, combined reports)` over `flagged`; `None` when nothing was flagged.
pub fn explanation_fraction(reports: &[Report], flagged: usize) -> Option<(f64, f64)> {
    if flagged == 0 {
        return None;
    }
    let path = reports.iter().filter(|r| r.kind == ReportKind::Path).count();
    let combined = reports.len() - path;
    Some((path as f64 / flagged as f64, combined as f64 / flagged as f64))
}

/// Share of combined reports in which at least one rule or finding fired.
pub fn informative_fraction(reports: &[Report]) -> Option<f64> {
    let combined: Vec<&Report> = reports.iter().filter(|r| r.kind == ReportKind::Combined).collect();
    if combined.is_empty() {
        return None;
    }
    Some(combined.iter().filter(|r| r.is_informative()).count() as f64 / combined.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub detector: DetectorConfig,
    pub thresholds: Thresholds,
    pub tree: TreeConfig,
    pub explain: ExplainConfig,
    pub lambda: f64,
    pub train_fraction: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            detector: DetectorConfig::default(),
            thresholds: Thresholds::default(),
            tree: TreeConfig::default(),
            explain: ExplainConfig::default(),
            lambda: 1e-4,
            train_fraction: 0.7,
        }
    }
}

/// Everything one repetition produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub model: AdmncModel,
    pub test: Dataset,
    pub scores: Vec<AnomalyScore>,
    pub auroc: f64,
    pub mse: f64,
    pub full_tree: SurrogateTree,
    pub pruned_tree: SurrogateTree,
    pub full: ComplexityMetrics,
    pub pruned: ComplexityMetrics,
    pub flagged: usize,
    pub reports: Vec<Report>,
}

impl RunOutcome {
    /// Fractions over the explained (top-N flagged) records.
    pub fn fractions(&self) -> Option<(f64, f64)> {
        explanation_fraction(&self.reports, self.reports.len())
    }

    /// Writes model, trees, scores and explanations into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(dir.join("model.json"))?;
        let totals: Vec<f64> = self.scores.iter().map(|s| s.total).collect();
        crate::detector::write_scores_csv(
            dir.join("scores.csv"),
            &self.scores,
            &rank_estimators(&totals, self.model.thresholds.ndt),
            self.model.anomaly_threshold,
        )?;
        self.full_tree.save(dir.join("tree.json"))?;
        write_text(&dir.join("tree.dot"), &render_dot(&self.full_tree, None))?;
        write_text(&dir.join("tree_pruned.dot"), &render_dot(&self.full_tree, Some(&self.pruned_tree)))?;
        write_text(&dir.join("explanations.txt"), &render_text(&self.reports))?;
        write_text(&dir.join("report.html"), &render_html(&self.reports))?;
        write_reports_json(dir.join("reports.json"), &self.reports)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One split, fit, score, tree, prune, explain pass.
pub fn run_once(ds: &Dataset, cfg: &ProtocolConfig, seed: u64) -> Result<RunOutcome> {
    let (train, test) = split(ds, cfg.train_fraction, seed)?;
    let model = fit(&train, &cfg.detector, cfg.thresholds, seed)?;
    let scores = model.score_dataset(&test)?;
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let labels: Option<Vec<Label>> = test.labels().into_iter().collect();
    let labels = labels.ok_or_else(|| Error::invalid("dataset", "evaluation needs a label on every record"))?;
    let auroc = auroc(&totals, &labels)?;
    let targets = rank_estimators(&totals, model.thresholds.ndt);
    let full_tree = build_full_tree(&test, &targets, model.thresholds, &cfg.tree)?;
    let pruned_tree = prune(&full_tree, cfg.lambda);
    let mse = tree_mse(&pruned_tree, &test, &targets);
    let flagged = scores.iter().filter(|s| model.is_flagged(s)).count();
    let reports = explain_top(&model, &pruned_tree, &test.records, &scores, &cfg.explain)?;
    Ok(RunOutcome {
        seed,
        full: quality(&full_tree, cfg.lambda),
        pruned: quality(&pruned_tree, cfg.lambda),
        model,
        test,
        scores,
        auroc,
        mse,
        full_tree,
        pruned_tree,
        flagged,
        reports,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation; a single value has `std = 0`.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Complexity metrics averaged over repetitions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanComplexity {
    pub wv: f64,
    pub num_clusters: f64,
    pub nv_total: f64,
    pub q: f64,
}

impl MeanComplexity {
    fn of(m: &[ComplexityMetrics]) -> MeanComplexity {
        let n = m.len() as f64;
        MeanComplexity {
            wv: m.iter().map(|c| c.wv).sum::<f64>() / n,
            num_clusters: m.iter().map(|c| c.num_clusters as f64).sum::<f64>() / n,
            nv_total: m.iter().map(|c| c.nv_total as f64).sum::<f64>() / n,
            q: m.iter().map(|c| c.q).sum::<f64>() / n,
        }
    }
}

/// One dataset's experiment record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub repetitions: usize,
    pub auroc: MeanStd,
    pub mse: MeanStd,
    pub ndt: f64,
    pub lambda: f64,
    pub full: MeanComplexity,
    pub pruned: MeanComplexity,
    /// Mean `(path, combined)` fractions over runs that flagged something.
    pub fractions: Option<(f64, f64)>,
    pub informative: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Seed of repetition `rep`.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(1000 * rep as u64)
}

/// Repeats `run_once` with distinct seeds (in parallel) and aggregates.
/// With `artifacts`, each run writes into `artifacts/run_<k>`.
pub fn run_protocol(
    name: &str,
    ds: &Dataset,
    cfg: &ProtocolConfig,
    repetitions: usize,
    seed: u64,
    artifacts: Option<&Path>,
) -> Result<EvalRow> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions", "must be at least 1"));
    }
    let runs: Vec<RunOutcome> = (0..repetitions)
        .into_par_iter()
        .map(|k| {
            let run = run_once(ds, cfg, repetition_seed(seed, k))?;
            if let Some(dir) = artifacts {
                run.write_artifacts(&dir.join(format!("run_{k}")))?;
            }
            log::info!("{name} run {k}: auroc {:.4}", run.auroc);
            Ok(run)
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(name, cfg, &runs))
}

pub fn aggregate(name: &str, cfg: &ProtocolConfig, runs: &[RunOutcome]) -> EvalRow {
    let fractions: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.fractions()).collect();
    EvalRow {
        dataset: name.to_string(),
        repetitions: runs.len(),
        auroc: MeanStd::of(&runs.iter().map(|r| r.auroc).collect::<Vec<_>>()),
        mse: MeanStd::of(&runs.iter().map(|r| r.mse).collect::<Vec<_>>()),
        ndt: cfg.thresholds.ndt,
        lambda: cfg.lambda,
        full: MeanComplexity::of(&runs.iter().map(|r| r.full).collect::<Vec<_>>()),
        pruned: MeanComplexity::of(&runs.iter().map(|r| r.pruned).collect::<Vec<_>>()),
        fractions: mean_of(fractions.iter().map(|f| f.0)).zip(mean_of(fractions.iter().map(|f| f.1))),
        informative: mean_of(runs.iter().filter_map(|r| informative_fraction(&r.reports))),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

const CSV_HEADER: &str = "dataset,repetitions,auroc_mean,auroc_std,mse_mean,mse_std,ndt,lambda,\
full_wv,full_clusters,full_nv,full_q,pruned_wv,pruned_clusters,pruned_nv,pruned_q,\
path_fraction,combined_fraction,informative_fraction";

/// `eval_results.csv`, one row per dataset.
pub fn write_eval_csv(path: impl AsRef<Path>, rows: &[EvalRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        let mut rec = vec![r.dataset.clone(), r.repetitions.to_string()];
        for v in [r.auroc.mean, r.auroc.std, r.mse.mean, r.mse.std, r.ndt, r.lambda] {
            rec.push(v.to_string());
        }
        for c in [r.full, r.pruned] {
            for v in [c.wv, c.num_clusters, c.nv_total, c.q] {
                rec.push(v.to_string());
            }
        }
        rec.push(opt(r.fractions.map(|f| f.0)));
        rec.push(opt(r.fractions.map(|f| f.1)));
        rec.push(opt(r.informative));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Table-style text rendering of the rows.
pub fn render_eval_text(rows: &[EvalRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>17} {:>17} {:>6} {:>8} {:>8} {:>9} {:>9} {:>15}",
        "dataset", "AUROC", "MSE", "NDT", "C full", "C pruned", "NV full", "NV pruned", "fractions"
    );
    for r in rows {
        let fractions = r
            .fractions
            .map_or_else(|| "NA".to_string(), |(p, c)| format!("{p:.3} - {c:.3}"));
        let _ = writeln!(
            s,
            "{:<16} {:>17} {:>17} {:>6.3} {:>8.1} {:>8.1} {:>9.1} {:>9.1} {:>15}",
            r.dataset,
            format!("{:.3} +/- {:.3}", r.auroc.mean, r.auroc.std),
            format!("{:.4} +/- {:.4}", r.mse.mean, r.mse.std),
            r.ndt,
            r.full.num_clusters,
            r.pruned.num_clusters,
            r.full.nv_total,
            r.pruned.nv_total,
            fractions
        );
    }
    s
}
