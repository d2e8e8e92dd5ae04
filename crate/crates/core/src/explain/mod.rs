//! Local explanations for flagged records.
//!
//! A record whose tree leaf lies in the anomalous band is explained by the
//! transcription of its root-to-leaf path. Every other flagged record gets a
//! combined report: two rules on the continuous part (outside every mixture
//! component, or assigned to a rarely used component) and the categorical
//! terms whose estimators fall below `t_filter`.

mod render;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use render::{render_dot, render_html, render_text, write_reports_json};

use crate::data::{one_hot, MixedRecord, Schema};
use crate::detector::{AdmncModel, AnomalyScore};
use crate::error::{Error, Result};
use crate::tree::{classify_leaf, LeafClass, SplitKind, SurrogateTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub t_filter: f64,
    /// Density threshold of rule 1. `None` uses the quantile stored with the model.
    pub pdf_threshold: Option<f64>,
    pub tiny_fraction: f64,
    pub top_n: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            t_filter: 0.40,
            pdf_threshold: None,
            tiny_fraction: 0.01,
            top_n: 400,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_filter > 0.0 && self.t_filter < 1.0) {
            return Err(Error::invalid("t_filter", format!("{} is outside (0, 1)", self.t_filter)));
        }
        if !(self.tiny_fraction > 0.0 && self.tiny_fraction < 1.0) {
            return Err(Error::invalid("tiny_fraction", format!("{} is outside (0, 1)", self.tiny_fraction)));
        }
        if let Some(p) = self.pdf_threshold {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::invalid("pdf_threshold", "must be a positive density"));
            }
        }
        if self.top_n == 0 {
            return Err(Error::invalid("top_n", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "in")]
    In,
    #[serde(rename = "not in")]
    NotIn,
}

impl Comparator {
    pub fn text(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::In => "in",
            Comparator::NotIn => "not in",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionValue {
    Number(f64),
    Levels(Vec<String>),
}

/// One split condition, in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub feature_index: usize,
    pub op: Comparator,
    pub value: ConditionValue,
}

impl Condition {
    /// Whether the record (original units) satisfies the condition.
    pub fn holds(&self, r: &MixedRecord, schema: &Schema) -> bool {
        let d = schema.continuous_dim();
        match (&self.op, &self.value) {
            (Comparator::Le, ConditionValue::Number(t)) => r.x[self.feature_index] <= *t,
            (Comparator::Gt, ConditionValue::Number(t)) => r.x[self.feature_index] > *t,
            (op, ConditionValue::Levels(levels)) => {
                let c = self.feature_index - d;
                let member = r.levels[c]
                    .map(|l| levels.iter().any(|s| *s == schema.categorical[c].levels[l as usize]))
                    .unwrap_or(false);
                match op {
                    Comparator::In => member,
                    _ => !member,
                }
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathExplanation {
    pub conditions: Vec<Condition>,
    /// Leaf count over the tree's dataset size.
    pub leaf_share: f64,
    pub leaf_class: LeafClass,
    pub leaf_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    AllGaussiansUnlikely,
    TinyComponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    LogPdfs(Vec<f64>),
    ComponentShare { component: usize, weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub rule: RuleId,
    pub fired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvolvedContinuous {
    pub feature: String,
    pub feature_index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFinding {
    pub j: usize,
    pub feature: String,
    /// Observed bit of term `j`.
    pub bit: u8,
    /// Term level, and the record's actual level of the same feature.
    pub term_level: String,
    pub observed: String,
    pub estimator: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub involved_continuous: Option<InvolvedContinuous>,
}

/// Values shown in the detailed sections of a combined report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedDetails {
    pub predicted_gaussian: Option<usize>,
    pub log_continuous: f64,
    pub component_log_pdfs: Vec<f64>,
    pub log_categorical: f64,
    /// Mean of every term estimator, not only the filtered ones.
    pub average_estimator: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Path,
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Record index in the scored dataset.
    pub index: usize,
    /// 1-based position among the top anomalies.
    pub rank: usize,
    pub kind: ReportKind,
    pub score: AnomalyScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathExplanation>,
    pub verdicts: Vec<RuleVerdict>,
    pub findings: Vec<CategoricalFinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<CombinedDetails>,
    pub summary_text: String,
}

impl Report {
    /// A combined report with at least one fired rule or finding.
    pub fn is_informative(&self) -> bool {
        self.kind == ReportKind::Path || self.verdicts.iter().any(|v| v.fired) || !self.findings.is_empty()
    }
}

fn routed_record(tree: &SurrogateTree, r: &MixedRecord) -> MixedRecord {
    match &tree.standardization {
        Some(s) => MixedRecord {
            x: s.transform(&r.x),
            levels: r.levels.clone(),
            label: r.label,
        },
        None => r.clone(),
    }
}

/// Root-to-leaf conditions for a record (original units).
pub fn path_conditions(tree: &SurrogateTree, r: &MixedRecord) -> PathExplanation {
    let routed = routed_record(tree, r);
    let path = tree.path(&routed);
    let schema = &tree.schema;
    let d = schema.continuous_dim();
    let mut conditions = Vec::with_capacity(path.len() - 1);
    for w in path.windows(2) {
        let (node, child) = (w[0], w[1]);
        let split = node.split.as_ref().expect("internal node on path");
        let went_left = node.left.as_deref().map(|l| l.id) == Some(child.id);
        let feature = schema.feature_name(split.feature).to_string();
        let (op, value) = match &split.kind {
            SplitKind::Continuous { threshold } => (
                if went_left { Comparator::Le } else { Comparator::Gt },
                ConditionValue::Number(tree.display_threshold(split.feature, *threshold)),
            ),
            SplitKind::Categorical { left_levels } => {
                let names = &schema.categorical[split.feature - d].levels;
                (
                    if went_left { Comparator::In } else { Comparator::NotIn },
                    ConditionValue::Levels(left_levels.iter().map(|&l| names[l as usize].clone()).collect()),
                )
            }
        };
        conditions.push(Condition {
            feature,
            feature_index: split.feature,
            op,
            value,
        });
    }
    let leaf = path.last().expect("non-empty path");
    PathExplanation {
        conditions,
        leaf_share: leaf.count as f64 / tree.total_count as f64,
        leaf_class: classify_leaf(leaf, &tree.thresholds),
        leaf_id: leaf.id,
    }
}

/// Path transcription; only defined for records landing in an anomalous leaf.
pub fn transcribe(tree: &SurrogateTree, r: &MixedRecord) -> Result<PathExplanation> {
    let p = path_conditions(tree, r);
    if p.leaf_class != LeafClass::Anomalous {
        return Err(Error::NotAnomalousLeaf);
    }
    Ok(p)
}

fn log_threshold(model: &AdmncModel, cfg: &ExplainConfig) -> f64 {
    cfg.pdf_threshold.map_or(model.log_pdf_threshold, f64::ln)
}

/// Rule verdicts for a standardized continuous vector.
pub fn continuous_rules(model: &AdmncModel, x: &[f64], cfg: &ExplainConfig) -> Result<Vec<RuleVerdict>> {
    let Some(gmm) = &model.gmm else {
        return Ok(Vec::new());
    };
    let logs = gmm.component_log_pdfs(x)?;
    let cut = log_threshold(model, cfg);
    let rule1 = logs.iter().all(|l| *l < cut);
    let assigned = gmm.assign(x)?;
    let weight = gmm.weights()[assigned];
    let rule2 = weight < cfg.tiny_fraction;
    Ok(vec![
        RuleVerdict {
            rule: RuleId::AllGaussiansUnlikely,
            fired: rule1,
            evidence: rule1.then_some(Evidence::LogPdfs(logs)),
        },
        RuleVerdict {
            rule: RuleId::TinyComponent,
            fired: rule2,
            evidence: rule2.then_some(Evidence::ComponentShare {
                component: assigned,
                weight,
            }),
        },
    ])
}

/// The list `E` of `(estimator, j)` sorted ascending; ties keep term order.
pub fn sorted_estimators(model: &AdmncModel, x: &[f64], y: &crate::data::OneHotView) -> Result<Vec<(f64, usize)>> {
    let est = model.w.term_estimators(x, y)?;
    let mut e: Vec<(f64, usize)> = est.into_iter().enumerate().map(|(j, v)| (v, j)).collect();
    e.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(e)
}

/// Coordinate of `(x, 1, m_j)` whose addend `w_i * v_i` pushes the signed
/// logit `(2 y_j - 1) z_j` down the most. Returns `(coordinate, signed addend)`;
/// ties go to the lowest coordinate.
pub fn harmful_addend(model: &AdmncModel, x: &[f64], j: usize, bit: u8) -> (usize, f64) {
    let s = if bit == 1 { 1.0 } else { -1.0 };
    let w = &model.w.w;
    let layout = model.w.layout;
    let mut best = (0usize, f64::INFINITY);
    let mut consider = |i: usize, addend: f64| {
        if addend < best.1 {
            best = (i, addend);
        }
    };
    for (i, v) in x.iter().enumerate() {
        consider(i, s * w[i] * v);
    }
    consider(layout.continuous, s * w[layout.continuous]);
    let oh = layout.one_hot_start() + j;
    consider(oh, s * w[oh]);
    best
}

/// Terms with estimator below `t_filter`, most improbable first.
pub fn categorical_findings(
    model: &AdmncModel,
    r: &MixedRecord,
    cfg: &ExplainConfig,
) -> Result<Vec<CategoricalFinding>> {
    let x = model.standardized_x(r);
    let y = one_hot(r, &model.schema)?;
    let schema = &model.schema;
    let mut out = Vec::new();
    for (est, j) in sorted_estimators(model, &x, &y)? {
        if est >= cfg.t_filter {
            break;
        }
        let (f, level) = schema.term_owner(j).expect("term index in range");
        let feature = &schema.categorical[f];
        let (coord, addend) = harmful_addend(model, &x, j, y.y[j]);
        let involved = (coord < model.w.layout.continuous && addend < 0.0).then(|| InvolvedContinuous {
            feature: schema.continuous[coord].clone(),
            feature_index: coord,
            value: r.x[coord],
        });
        out.push(CategoricalFinding {
            j,
            feature: feature.name.clone(),
            bit: y.y[j],
            term_level: feature.levels[level as usize].clone(),
            observed: r.levels[f].map_or_else(|| "unknown".to_string(), |l| feature.levels[l as usize].clone()),
            estimator: est,
            involved_continuous: involved,
        });
    }
    Ok(out)
}

/// Explains one flagged record. `rank` is its 1-based position among the
/// top anomalies.
pub fn explain(
    model: &AdmncModel,
    tree: &SurrogateTree,
    index: usize,
    rank: usize,
    r: &MixedRecord,
    cfg: &ExplainConfig,
) -> Result<Report> {
    let score = model.score(r)?;
    if !model.is_flagged(&score) {
        return Err(Error::NotFlagged { index });
    }
    let path = path_conditions(tree, r);
    let mut report = if path.leaf_class == LeafClass::Anomalous {
        Report {
            index,
            rank,
            kind: ReportKind::Path,
            score,
            path: Some(path),
            verdicts: Vec::new(),
            findings: Vec::new(),
            details: None,
            summary_text: String::new(),
        }
    } else {
        let x = model.standardized_x(r);
        let y = one_hot(r, &model.schema)?;
        let estimators = model.w.term_estimators(&x, &y)?;
        let average_estimator = if estimators.is_empty() {
            f64::NAN
        } else {
            estimators.iter().sum::<f64>() / estimators.len() as f64
        };
        let (predicted_gaussian, component_log_pdfs) = match &model.gmm {
            Some(g) => (Some(g.assign(&x)?), g.component_log_pdfs(&x)?),
            None => (None, Vec::new()),
        };
        Report {
            index,
            rank,
            kind: ReportKind::Combined,
            score,
            path: None,
            verdicts: continuous_rules(model, &x, cfg)?,
            findings: categorical_findings(model, r, cfg)?,
            details: Some(CombinedDetails {
                predicted_gaussian,
                log_continuous: score.log_continuous,
                component_log_pdfs,
                log_categorical: score.log_categorical,
                average_estimator,
            }),
            summary_text: String::new(),
        }
    };
    report.summary_text = render::summary(&report);
    Ok(report)
}

/// Reports for the `top_n` lowest-scoring flagged records of `records`.
pub fn explain_top(
    model: &AdmncModel,
    tree: &SurrogateTree,
    records: &[MixedRecord],
    scores: &[AnomalyScore],
    cfg: &ExplainConfig,
) -> Result<Vec<Report>> {
    cfg.validate()?;
    let top = model.top_anomalies(scores, cfg.top_n);
    top.par_iter()
        .enumerate()
        .map(|(k, (i, _))| explain(model, tree, *i, k + 1, &records[*i], cfg))
        .collect()
}

/// Fraction of the term estimators of `x` below `t`, for the preserved-terms curve.
pub fn preserved_fraction(model: &AdmncModel, r: &MixedRecord, t: f64) -> Result<f64> {
    let x = model.standardized_x(r);
    let y = one_hot(r, &model.schema)?;
    let e = model.w.term_estimators(&x, &y)?;
    Ok(e.iter().filter(|v| **v < t).count() as f64 / e.len().max(1) as f64)
}

#[cfg(test)]
mod tests;
