//! Conditional model `P(y | x, w)` over the one-hot categorical bits.
//!
//! Every bit `j` gets the logistic estimator
//! `sigma((2 y_j - 1) <w, (x, 1, m_j)>)` with a single parameter vector `w`
//! shared across bits. Only the `m_j` coordinate of the one-hot block is
//! non-zero, so `z_j = <w_cont, x> + bias + w_onehot[j]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{active_bits, Dataset, OneHotView};
use crate::error::{Error, Result};
use crate::parallel::map_reduce;

/// Logistic function, evaluated without overflow on either tail.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Widths of the three blocks of `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub continuous: usize,
    pub bias: usize,
    pub one_hot: usize,
}

impl Layout {
    pub fn new(continuous: usize, one_hot: usize) -> Self {
        Self {
            continuous,
            bias: 1,
            one_hot,
        }
    }

    pub fn len(&self) -> usize {
        self.continuous + self.bias + self.one_hot
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first one-hot coordinate.
    pub fn one_hot_start(&self) -> usize {
        self.continuous + self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr")]
pub struct CategoricalModel {
    pub layout: Layout,
    pub w: Vec<f64>,
}

#[derive(Deserialize)]
struct ModelRepr {
    layout: Layout,
    w: Vec<f64>,
}

impl TryFrom<ModelRepr> for CategoricalModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        CategoricalModel::new(r.layout, r.w)
    }
}

impl CategoricalModel {
    pub fn new(layout: Layout, w: Vec<f64>) -> Result<Self> {
        if layout.bias != 1 {
            return Err(Error::invalid("layout.bias", "must be 1"));
        }
        if w.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                actual: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("w", "non-finite entry"));
        }
        Ok(Self { layout, w })
    }

    pub fn zeros(continuous: usize, one_hot: usize) -> Self {
        let layout = Layout::new(continuous, one_hot);
        Self {
            w: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn width(&self) -> usize {
        self.layout.one_hot
    }

    pub fn continuous_weights(&self) -> &[f64] {
        &self.w[..self.layout.continuous]
    }

    pub fn bias(&self) -> f64 {
        self.w[self.layout.continuous]
    }

    pub fn one_hot_weights(&self) -> &[f64] {
        &self.w[self.layout.one_hot_start()..]
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.continuous {
            return Err(Error::DimensionMismatch {
                expected: self.layout.continuous,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `<w_cont, x> + bias`, the part of `z_j` shared by every bit.
    pub fn shared_term(&self, x: &[f64]) -> f64 {
        self.continuous_weights().iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias()
    }

    /// `z_j = <w, (x, 1, m_j)>`.
    pub fn z(&self, x: &[f64], j: usize) -> Result<f64> {
        self.check_x(x)?;
        self.check_j(j)?;
        Ok(self.shared_term(x) + self.one_hot_weights()[j])
    }

    fn check_j(&self, j: usize) -> Result<()> {
        if j >= self.width() {
            return Err(Error::Encoding(format!(
                "term index {j} out of range for width {}",
                self.width()
            )));
        }
        Ok(())
    }

    pub fn term_estimator(&self, x: &[f64], j: usize, y_j: u8) -> Result<f64> {
        let z = self.z(x, j)?;
        Ok(sigmoid(sign(y_j) * z))
    }

    /// Every term estimator for the observed bits.
    pub fn term_estimators(&self, x: &[f64], y: &OneHotView) -> Result<Vec<f64>> {
        self.check_shapes(x, y)?;
        let c = self.shared_term(x);
        Ok(self
            .one_hot_weights()
            .iter()
            .zip(&y.y)
            .map(|(wj, &b)| sigmoid(sign(b) * (c + wj)))
            .collect())
    }

    fn check_shapes(&self, x: &[f64], y: &OneHotView) -> Result<()> {
        self.check_x(x)?;
        if y.width() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                actual: y.width(),
            });
        }
        Ok(())
    }

    /// `sum_j ln term_estimator(x, j, y_j)`.
    pub fn log_cond_prob(&self, x: &[f64], y: &OneHotView) -> Result<f64> {
        self.check_shapes(x, y)?;
        let c = self.shared_term(x);
        Ok(-self
            .one_hot_weights()
            .iter()
            .zip(&y.y)
            .map(|(wj, &b)| softplus(-sign(b) * (c + wj)))
            .sum::<f64>())
    }

    /// Same as [`log_cond_prob`](Self::log_cond_prob) with the active bit
    /// positions given directly.
    pub fn log_cond_prob_bits(&self, x: &[f64], active: &[usize]) -> f64 {
        record_nll(&self.w, self.layout, x, active).map_or(f64::NAN, |v| -v)
    }
}

fn sign(bit: u8) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Negative log conditional probability of one record; `None` for an
/// out-of-range bit.
fn record_nll(w: &[f64], layout: Layout, x: &[f64], active: &[usize]) -> Option<f64> {
    let c: f64 = w[..layout.continuous].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[layout.continuous];
    let oh = &w[layout.one_hot_start()..];
    let mut total: f64 = oh.iter().map(|wj| softplus(c + wj)).sum();
    for &j in active {
        let z = c + oh.get(j)?;
        // swap the y=0 term for the y=1 term
        total += softplus(-z) - softplus(z);
    }
    Some(total)
}

/// Training rows in the form used by the optimizer.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub layout: Layout,
    /// Row-major continuous block.
    pub x: Vec<f64>,
    pub active: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let offsets = ds.schema.block_offsets();
        Self {
            layout: Layout::new(ds.schema.continuous_dim(), ds.schema.one_hot_width()),
            x: ds.continuous_matrix(),
            active: ds.records.iter().map(|r| active_bits(&r.levels, &offsets)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        let d = self.layout.continuous;
        &self.x[i * d..(i + 1) * d]
    }
}

/// Mean negative log-likelihood over `rows` plus `l2 * |w|^2`, and its gradient.
pub fn loss_and_gradient(w: &[f64], data: &TrainingSet, rows: &[usize], l2: f64) -> (f64, Vec<f64>) {
    let layout = data.layout;
    let d = layout.continuous;
    let start = layout.one_hot_start();
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let mut gz = vec![0.0; layout.one_hot];
    for &i in rows {
        let x = data.row(i);
        let c: f64 = w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d];
        let oh = &w[start..];
        // y_j = 0 everywhere, then patch the active bits
        for (j, wj) in oh.iter().enumerate() {
            let z = c + wj;
            loss += softplus(z);
            gz[j] = sigmoid(z);
        }
        for &j in &data.active[i] {
            let z = c + oh[j];
            loss += softplus(-z) - softplus(z);
            gz[j] = -sigmoid(-z);
        }
        let gc: f64 = gz.iter().sum();
        for (g, v) in grad[..d].iter_mut().zip(x) {
            *g += gc * v;
        }
        grad[d] += gc;
        for (g, v) in grad[start..].iter_mut().zip(&gz) {
            *g += v;
        }
    }
    let n = rows.len().max(1) as f64;
    loss /= n;
    for (g, wv) in grad.iter_mut().zip(w) {
        *g = *g / n + 2.0 * l2 * wv;
    }
    loss += l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad)
}

/// Mean negative log-likelihood over the whole set (no regularizer).
pub fn mean_nll(w: &[f64], data: &TrainingSet) -> f64 {
    let total = map_reduce(
        data.len(),
        |range| {
            range
                .map(|i| record_nll(w, data.layout, data.row(i), &data.active[i]).unwrap_or(f64::NAN))
                .sum::<f64>()
        },
        |a, b| a + b,
    )
    .unwrap_or(0.0);
    total / data.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 256,
            epochs: 10,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SgdFit {
    pub model: CategoricalModel,
    /// Mean training negative log-likelihood at initialization and after each epoch.
    pub trace: Vec<f64>,
}

pub fn fit_sgd(train: &Dataset, cfg: &SgdConfig) -> Result<SgdFit> {
    fit_sgd_on(&TrainingSet::from_dataset(train), cfg)
}

/// Mini-batch SGD from `w = 0` with step size `learning_rate / sqrt(t)`.
pub fn fit_sgd_on(data: &TrainingSet, cfg: &SgdConfig) -> Result<SgdFit> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("categorical model needs training rows".into()));
    }
    let mut w = vec![0.0; data.layout.len()];
    let initial = mean_nll(&w, data);
    let mut trace = vec![initial];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            t += 1;
            let (_, grad) = loss_and_gradient(&w, data, batch, cfg.l2);
            let step = cfg.learning_rate / (t as f64).sqrt();
            for (wv, g) in w.iter_mut().zip(&grad) {
                *wv -= step * g;
            }
        }
        let loss = mean_nll(&w, data);
        if !loss.is_finite() || loss > 10.0 * initial {
            return Err(Error::Diverged { loss, initial });
        }
        trace.push(loss);
    }
    Ok(SgdFit {
        model: CategoricalModel::new(data.layout, w)?,
        trace,
    })
}
