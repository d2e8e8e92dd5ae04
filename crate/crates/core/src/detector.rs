//! The ADMNC detector: a Gaussian mixture for `P(x)` and the shared-weight
//! logistic model for `P(y | x)`, scored as the sum of both log terms.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{fit_sgd_on, CategoricalModel, SgdConfig, TrainingSet};
use crate::data::{active_bits, Dataset, MixedRecord, Schema, Standardization};
use crate::error::{Error, Result};
use crate::gmm::{self, GmmConfig, GmmParams};
use crate::parallel::CHUNK_ROWS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub gmm: GmmConfig,
    pub sgd: SgdConfig,
    /// Fraction of training records flagged by the calibrated threshold.
    pub target_ratio: f64,
    /// Quantile of the per-record best component log-density on training
    /// data below which a continuous vector counts as outside every component.
    pub pdf_quantile: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gmm: GmmConfig::default(),
            sgd: SgdConfig::default(),
            target_ratio: 0.05,
            pdf_quantile: 0.001,
        }
    }
}

/// Bands of the rank estimator range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub adt: f64,
    pub ndt: f64,
}

impl Thresholds {
    pub fn new(adt: f64, ndt: f64) -> Result<Self> {
        let th = Self { adt, ndt };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adt > 0.0 && self.adt < 1.0) {
            return Err(Error::invalid("adt", format!("{} is outside (0, 1)", self.adt)));
        }
        if !(self.ndt > 0.0 && self.ndt <= 1.0) {
            return Err(Error::invalid("ndt", format!("{} is outside (0, 1]", self.ndt)));
        }
        if self.adt > self.ndt {
            return Err(Error::invalid("adt", format!("{} exceeds ndt {}", self.adt, self.ndt)));
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { adt: 0.05, ndt: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub log_continuous: f64,
    pub log_categorical: f64,
    pub total: f64,
}

impl AnomalyScore {
    pub fn new(log_continuous: f64, log_categorical: f64) -> Self {
        Self {
            log_continuous,
            log_categorical,
            total: log_continuous + log_categorical,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTarget {
    pub index: usize,
    pub estimator: f64,
}

/// Fitted detector, serialized as the model bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BundleRepr")]
pub struct AdmncModel {
    pub schema: Schema,
    pub stats: Standardization,
    /// `None` when the schema has no continuous features.
    pub gmm: Option<GmmParams>,
    pub w: CategoricalModel,
    /// Records with `total` below this value are flagged.
    pub anomaly_threshold: f64,
    /// Component log-density below which a continuous vector is outside a component.
    pub log_pdf_threshold: f64,
    pub thresholds: Thresholds,
    pub config: DetectorConfig,
    pub seed: u64,
}

#[derive(Deserialize)]
struct BundleRepr {
    schema: Schema,
    stats: Standardization,
    gmm: Option<GmmParams>,
    w: CategoricalModel,
    anomaly_threshold: f64,
    log_pdf_threshold: f64,
    thresholds: Thresholds,
    config: DetectorConfig,
    seed: u64,
}

impl TryFrom<BundleRepr> for AdmncModel {
    type Error = Error;

    fn try_from(b: BundleRepr) -> Result<Self> {
        let model = AdmncModel {
            schema: b.schema,
            stats: b.stats,
            gmm: b.gmm,
            w: b.w,
            anomaly_threshold: b.anomaly_threshold,
            log_pdf_threshold: b.log_pdf_threshold,
            thresholds: b.thresholds,
            config: b.config,
            seed: b.seed,
        };
        model.check()?;
        Ok(model)
    }
}

impl AdmncModel {
    fn check(&self) -> Result<()> {
        self.schema.check_names()?;
        self.schema.validate()?;
        let d = self.schema.continuous_dim();
        let mismatch = |expected, actual| Error::DimensionMismatch { expected, actual };
        if self.stats.dim() != d {
            return Err(mismatch(d, self.stats.dim()));
        }
        match &self.gmm {
            Some(g) if g.dim() != d => return Err(mismatch(d, g.dim())),
            None if d > 0 => return Err(Error::invalid("gmm", "missing for a schema with continuous features")),
            _ => {}
        }
        if self.w.layout.continuous != d {
            return Err(mismatch(d, self.w.layout.continuous));
        }
        if self.w.width() != self.schema.one_hot_width() {
            return Err(mismatch(self.schema.one_hot_width(), self.w.width()));
        }
        if self.anomaly_threshold.is_nan() || self.log_pdf_threshold.is_nan() {
            return Err(Error::invalid("thresholds", "NaN threshold"));
        }
        self.thresholds.validate()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("model bundle", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Continuous values in model space.
    pub fn standardized_x(&self, r: &MixedRecord) -> Vec<f64> {
        self.stats.transform(&r.x)
    }

    /// Scores a record given in original units.
    pub fn score(&self, r: &MixedRecord) -> Result<AnomalyScore> {
        r.check(&self.schema)?;
        Ok(self.score_standardized(&self.standardized_x(r), &r.levels))
    }

    fn score_standardized(&self, x: &[f64], levels: &[Option<u32>]) -> AnomalyScore {
        let log_continuous = match &self.gmm {
            Some(g) => g.log_pdf(x).expect("dimension checked"),
            None => 0.0,
        };
        let active = active_bits(levels, &self.schema.block_offsets());
        AnomalyScore::new(log_continuous, self.w.log_cond_prob_bits(x, &active))
    }

    /// Scores every record. A standardized dataset must carry the model's
    /// statistics; a raw one is standardized on the fly.
    pub fn score_dataset(&self, ds: &Dataset) -> Result<Vec<AnomalyScore>> {
        if !self.schema.is_compatible_with(&ds.schema) && ds.schema != self.schema {
            return Err(Error::Schema("dataset schema does not match the model".into()));
        }
        let raw = match &ds.standardization {
            None => true,
            Some(s) if *s == self.stats => false,
            Some(_) => {
                return Err(Error::Schema(
                    "dataset was standardized with statistics other than the model's".into(),
                ))
            }
        };
        for r in &ds.records {
            r.check(&self.schema)?;
        }
        let mut out = vec![AnomalyScore::new(0.0, 0.0); ds.len()];
        out.par_chunks_mut(CHUNK_ROWS)
            .zip(ds.records.par_chunks(CHUNK_ROWS))
            .for_each(|(o, recs)| {
                for (s, r) in o.iter_mut().zip(recs) {
                    *s = if raw {
                        self.score_standardized(&self.standardized_x(r), &r.levels)
                    } else {
                        self.score_standardized(&r.x, &r.levels)
                    };
                }
            });
        Ok(out)
    }

    pub fn is_flagged(&self, s: &AnomalyScore) -> bool {
        s.total < self.anomaly_threshold
    }

    pub fn rank_estimators(&self, ds: &Dataset) -> Result<Vec<EstimatorTarget>> {
        let totals: Vec<f64> = self.score_dataset(ds)?.iter().map(|s| s.total).collect();
        Ok(rank_estimators(&totals, self.thresholds.ndt))
    }

    pub fn top_anomalies(&self, scores: &[AnomalyScore], n: usize) -> Vec<(usize, AnomalyScore)> {
        top_anomalies(scores, self.anomaly_threshold, n)
    }
}

/// Fits both sub-models on `train` (normal records, original units) and
/// calibrates the thresholds on the training scores.
pub fn fit(train: &Dataset, cfg: &DetectorConfig, thresholds: Thresholds, seed: u64) -> Result<AdmncModel> {
    thresholds.validate()?;
    if !(0.0..1.0).contains(&cfg.target_ratio) {
        return Err(Error::invalid("target_ratio", format!("{} is outside [0, 1)", cfg.target_ratio)));
    }
    if !(0.0..1.0).contains(&cfg.pdf_quantile) {
        return Err(Error::invalid("pdf_quantile", format!("{} is outside [0, 1)", cfg.pdf_quantile)));
    }
    if train.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 records, got {}",
            train.len()
        )));
    }
    let std_ds;
    let ds = if train.is_standardized() {
        train
    } else {
        std_ds = crate::data::standardize(train)?;
        &std_ds
    };
    let stats = ds.standardization.clone().expect("standardized");
    let d = ds.schema.continuous_dim();

    let sgd_cfg = SgdConfig {
        seed: seed.wrapping_add(1),
        ..cfg.sgd.clone()
    };
    let cat_data = TrainingSet::from_dataset(ds);
    let (gmm_fit, cat_fit) = rayon::join(
        || -> Result<Option<GmmParams>> {
            if d == 0 {
                return Ok(None);
            }
            let x = ds.continuous_matrix();
            Ok(Some(gmm::fit(&x, d, &cfg.gmm, seed)?.params))
        },
        || fit_sgd_on(&cat_data, &sgd_cfg),
    );
    let gmm = gmm_fit?;
    let cat = cat_fit?.model;

    let mut model = AdmncModel {
        schema: ds.schema.clone(),
        stats,
        gmm,
        w: cat,
        anomaly_threshold: f64::NEG_INFINITY,
        log_pdf_threshold: f64::NEG_INFINITY,
        thresholds,
        config: cfg.clone(),
        seed,
    };
    let totals: Vec<f64> = model.score_dataset(ds)?.iter().map(|s| s.total).collect();
    model.anomaly_threshold = calibrate(&totals, cfg.target_ratio)?;
    if let Some(g) = &model.gmm {
        let best: Vec<f64> = ds
            .records
            .par_iter()
            .map(|r| {
                g.component_log_pdfs(&r.x)
                    .expect("dimension checked")
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        model.log_pdf_threshold = calibrate(&best, cfg.pdf_quantile)?;
    }
    Ok(model)
}

/// Empirical `ratio`-quantile cut: with `m = round(ratio * n)` the threshold
/// sits halfway between the m-th and (m+1)-th smallest scores, so exactly the
/// `m` lowest scores fall strictly below it (barring ties).
pub fn calibrate(scores: &[f64], ratio: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("no scores to calibrate on".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid("target_ratio", format!("{ratio} is outside [0, 1)")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores", "NaN score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = ((ratio * n as f64).round() as usize).min(n);
    Ok(if m == 0 {
        sorted[0].next_down()
    } else if m == n {
        sorted[n - 1].next_up()
    } else {
        sorted[m - 1] + (sorted[m] - sorted[m - 1]) / 2.0
    })
}

/// Ascending average ranks, starting at 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank of each total over `totals.len()`, clamped at `ndt`.
pub fn rank_estimators(totals: &[f64], ndt: f64) -> Vec<EstimatorTarget> {
    let n = totals.len() as f64;
    average_ranks(totals)
        .into_iter()
        .enumerate()
        .map(|(index, r)| EstimatorTarget {
            index,
            estimator: (r / n).min(ndt),
        })
        .collect()
}

/// The `n` lowest totals below `threshold`, ascending (ties by index).
pub fn top_anomalies(scores: &[AnomalyScore], threshold: f64, n: usize) -> Vec<(usize, AnomalyScore)> {
    let mut flagged: Vec<(usize, AnomalyScore)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, s)| s.total < threshold)
        .collect();
    flagged.sort_by(|a, b| a.1.total.total_cmp(&b.1.total).then(a.0.cmp(&b.0)));
    flagged.truncate(n);
    flagged
}

/// Score dump: `index,log_cont,log_cat,total,estimator,flagged`.
pub fn write_scores_csv(
    path: impl AsRef<Path>,
    scores: &[AnomalyScore],
    estimators: &[EstimatorTarget],
    threshold: f64,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "index,log_cont,log_cat,total,estimator,flagged").map_err(io)?;
    for (i, (s, e)) in scores.iter().zip(estimators).enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{}",
            s.log_continuous,
            s.log_categorical,
            s.total,
            e.estimator,
            s.total < threshold
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
