//! Gaussian mixture model for the continuous marginal `P(x)`: k-means
//! initialization on a data subset, EM fitting and log-density evaluation.
//!
//! Points are passed as a row-major slice plus a dimension.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{map_reduce, CHUNK_ROWS};

/// Diagonal ridge added to every covariance, relative to the feature variance.
pub const RIDGE_SCALE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug)]
struct Factor {
    /// Lower Cholesky factor, row-major.
    lower: Vec<f64>,
    log_norm: f64,
}

/// Mixture weights, means and full covariances (row-major `d x d`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<f64>>,
    factors: Vec<Factor>,
}

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Covariance rows per component.
    covariances: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<GmmRepr> for GmmParams {
    type Error = Error;

    fn try_from(r: GmmRepr) -> Result<Self> {
        let covariances = r
            .covariances
            .into_iter()
            .map(|rows| rows.into_iter().flatten().collect())
            .collect();
        GmmParams::new(r.weights, r.means, covariances)
    }
}

impl From<GmmParams> for GmmRepr {
    fn from(p: GmmParams) -> Self {
        let d = p.dim();
        GmmRepr {
            weights: p.weights,
            means: p.means,
            covariances: p
                .covariances
                .into_iter()
                .map(|c| c.chunks(d.max(1)).map(|row| row.to_vec()).collect())
                .collect(),
        }
    }
}

impl PartialEq for GmmParams {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.means == other.means && self.covariances == other.covariances
    }
}

fn factorize(cov: &[f64], d: usize) -> Option<Factor> {
    let chol = DMatrix::from_row_slice(d, d, cov).cholesky()?;
    let l = chol.l();
    let mut lower = vec![0.0; d * d];
    let mut log_det = 0.0;
    for i in 0..d {
        for j in 0..=i {
            lower[i * d + j] = l[(i, j)];
        }
        log_det += 2.0 * l[(i, i)].ln();
    }
    if !log_det.is_finite() {
        return None;
    }
    Some(Factor {
        lower,
        log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
    })
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("weights", "at least one component is required"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::invalid("means/covariances", "one entry per component is required"));
        }
        let d = means[0].len();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weights", format!("sum to {total}, not 1")));
        }
        let mut factors = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: m.len(),
                });
            }
            if c.len() != d * d {
                return Err(Error::DimensionMismatch {
                    expected: d * d,
                    actual: c.len(),
                });
            }
            if m.iter().chain(c).any(|v| !v.is_finite()) {
                return Err(Error::invalid("means/covariances", "non-finite entry"));
            }
            let f = factorize(c, d)
                .ok_or_else(|| Error::invalid("covariances", "matrix is not positive definite"))?;
            factors.push(f);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covariances
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn component_log_pdf_unchecked(&self, i: usize, x: &[f64]) -> f64 {
        let d = self.dim();
        let f = &self.factors[i];
        let mu = &self.means[i];
        // forward substitution L y = x - mu
        let mut y = [0.0f64; 32];
        let mut heap;
        let y: &mut [f64] = if d <= 32 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut maha = 0.0;
        for r in 0..d {
            let row = &f.lower[r * d..r * d + r];
            let mut acc = x[r] - mu[r];
            for (l, yv) in row.iter().zip(y.iter()) {
                acc -= l * yv;
            }
            let v = acc / f.lower[r * d + r];
            y[r] = v;
            maha += v * v;
        }
        f.log_norm - 0.5 * maha
    }

    /// `log N(x; mu_i, Sigma_i)` for every component, without mixture weights.
    pub fn component_log_pdfs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok((0..self.num_components())
            .map(|i| self.component_log_pdf_unchecked(i, x))
            .collect())
    }

    fn weighted_log_pdfs(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.weights[i].ln() + self.component_log_pdf_unchecked(i, x);
        }
    }

    /// Mixture log-density by log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut buf = vec![0.0; self.num_components()];
        self.weighted_log_pdfs(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Component maximizing `weight_i * density_i`; ties go to the lowest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        let mut buf = vec![0.0; self.num_components()];
        self.weighted_log_pdfs(x, &mut buf);
        let mut best = 0;
        for (i, v) in buf.iter().enumerate() {
            if *v > buf[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Mixture log-density for every row of `data`.
    pub fn log_pdf_batch(&self, data: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: data.len(),
            });
        }
        let n = data.len() / d;
        let mut out = vec![0.0; n];
        out.par_chunks_mut(CHUNK_ROWS)
            .zip(data.par_chunks(CHUNK_ROWS * d))
            .for_each(|(o, rows)| {
                let mut buf = vec![0.0; self.num_components()];
                for (v, x) in o.iter_mut().zip(rows.chunks_exact(d)) {
                    self.weighted_log_pdfs(x, &mut buf);
                    *v = log_sum_exp(&buf);
                }
            });
        Ok(out)
    }

    /// Mean log-likelihood per row.
    pub fn mean_log_likelihood(&self, data: &[f64]) -> Result<f64> {
        let v = self.log_pdf_batch(data)?;
        Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_points(data: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::invalid("dim", "continuous dimension must be positive"));
    }
    if !data.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: data.len() % dim,
        });
    }
    let n = data.len() / dim;
    if n == 0 {
        return Err(Error::InsufficientData("no points".into()));
    }
    Ok(n)
}

/// Per-feature ridge `RIDGE_SCALE * variance`; zero-variance features get `RIDGE_SCALE`.
pub fn ridge_for(data: &[f64], dim: usize) -> Vec<f64> {
    let n = (data.len() / dim).max(1) as f64;
    (0..dim)
        .map(|j| {
            let mean = data.iter().skip(j).step_by(dim).sum::<f64>() / n;
            let var = data.iter().skip(j).step_by(dim).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                RIDGE_SCALE * var
            } else {
                RIDGE_SCALE
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(mu, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn count_distinct(rows: &[&[f64]], limit: usize) -> usize {
    let mut sorted: Vec<&[f64]> = rows.to_vec();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut distinct = 0;
    for (i, r) in sorted.iter().enumerate() {
        if i == 0 || sorted[i - 1] != *r {
            distinct += 1;
            if distinct >= limit {
                break;
            }
        }
    }
    distinct
}

/// k-means on a random subset of the rows, turned into mixture parameters:
/// centroids as means, per-cluster covariance plus ridge, cluster shares as
/// weights.
pub fn init_kmeans(data: &[f64], dim: usize, k: usize, subset_fraction: f64, seed: u64) -> Result<GmmParams> {
    let n = check_points(data, dim)?;
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
        return Err(Error::invalid("subset_fraction", format!("{subset_fraction} is outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = ((subset_fraction * n as f64).ceil() as usize).clamp(k.min(n), n);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let rows: Vec<&[f64]> = idx.iter().map(|&i| &data[i * dim..(i + 1) * dim]).collect();

    if count_distinct(&rows, k) < k {
        return Err(Error::DegenerateClusters(format!(
            "k = {k} exceeds the number of distinct points in the subset"
        )));
    }

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = vec![rows[rng.random_range(0..m)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centroids.push(rows[next].to_vec());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; m];
    for _ in 0..100 {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let (c, _) = nearest(&centroids, r);
            if c != assignment[i] {
                assignment[i] = c;
                changed = true;
            }
        }
        reseed_empty(&rows, &mut centroids, &mut assignment);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            for j in 0..dim {
                centroids[c][j] = sums[c][j] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let subset_flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let ridge = ridge_for(&subset_flat, dim);
    let mut counts = vec![0usize; k];
    let mut covs = vec![vec![0.0; dim * dim]; k];
    for (r, &c) in rows.iter().zip(&assignment) {
        counts[c] += 1;
        let mu = &centroids[c];
        for a in 0..dim {
            let da = r[a] - mu[a];
            for b in 0..dim {
                covs[c][a * dim + b] += da * (r[b] - mu[b]);
            }
        }
    }
    for c in 0..k {
        for v in covs[c].iter_mut() {
            *v /= counts[c] as f64;
        }
        for j in 0..dim {
            covs[c][j * dim + j] += ridge[j];
        }
    }
    let weights = normalized(counts.iter().map(|&c| c as f64).collect());
    let covs = covs
        .into_iter()
        .map(|c| repair_covariance(c, dim, &ridge))
        .collect();
    GmmParams::new(weights, centroids, covs)
}

fn normalized(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// An empty cluster takes the point farthest from its current centroid.
fn reseed_empty(rows: &[&[f64]], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, r) in rows.iter().enumerate() {
            if counts[assignment[i]] <= 1 {
                continue;
            }
            let d = sq_dist(r, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        centroids[empty] = rows[i].to_vec();
        assignment[i] = empty;
    }
}

/// Grows the ridge until the matrix factorizes.
fn repair_covariance(mut cov: Vec<f64>, dim: usize, ridge: &[f64]) -> Vec<f64> {
    let mut scale = 1.0;
    while factorize(&cov, dim).is_none() {
        scale *= 10.0;
        log::warn!("covariance collapsed; adding ridge x{scale:e}");
        for j in 0..dim {
            cov[j * dim + j] += ridge[j] * scale;
        }
        if scale > 1e12 {
            break;
        }
    }
    cov
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: GmmParams,
    /// Mean log-likelihood per row, one entry per E-step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

struct Suff {
    ll: f64,
    nk: Vec<f64>,
    sx: Vec<f64>,
}

impl Suff {
    fn merge(mut self, o: Suff) -> Suff {
        self.ll += o.ll;
        for (a, b) in self.nk.iter_mut().zip(o.nk) {
            *a += b;
        }
        for (a, b) in self.sx.iter_mut().zip(o.sx) {
            *a += b;
        }
        self
    }
}

/// Expectation-Maximization from `init`. Stops after `max_iter` E-steps or
/// when the relative log-likelihood improvement drops below `tol`.
pub fn fit_em(data: &[f64], dim: usize, init: GmmParams, max_iter: usize, tol: f64) -> Result<EmFit> {
    let n = check_points(data, dim)?;
    if init.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: init.dim(),
        });
    }
    let k = init.num_components();
    let ridge = ridge_for(data, dim);
    let mut params = init;
    let mut trace = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        // E-step: responsibilities, log-likelihood, counts and first moments
        let parts: Vec<Suff> = resp
            .par_chunks_mut(CHUNK_ROWS * k)
            .zip(data.par_chunks(CHUNK_ROWS * dim))
            .map(|(r_chunk, rows)| {
                let mut s = Suff {
                    ll: 0.0,
                    nk: vec![0.0; k],
                    sx: vec![0.0; k * dim],
                };
                let mut buf = vec![0.0; k];
                for (r, x) in r_chunk.chunks_exact_mut(k).zip(rows.chunks_exact(dim)) {
                    params.weighted_log_pdfs(x, &mut buf);
                    let lse = log_sum_exp(&buf);
                    s.ll += lse;
                    for c in 0..k {
                        let g = (buf[c] - lse).exp();
                        r[c] = g;
                        s.nk[c] += g;
                        for j in 0..dim {
                            s.sx[c * dim + j] += g * x[j];
                        }
                    }
                }
                s
            })
            .collect();
        let suff = parts.into_iter().reduce(Suff::merge).expect("non-empty data");
        let mean_ll = suff.ll / n as f64;
        if let Some(&prev) = trace.last() {
            trace.push(mean_ll);
            let prev: f64 = prev;
            if (mean_ll - prev) / prev.abs().max(1e-300) < tol {
                converged = true;
                break;
            }
        } else {
            trace.push(mean_ll);
        }

        // M-step
        let means: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                if suff.nk[c] > 1e-10 {
                    (0..dim).map(|j| suff.sx[c * dim + j] / suff.nk[c]).collect()
                } else {
                    params.means[c].clone()
                }
            })
            .collect();
        let resp_ref = &resp;
        let means_ref = &means;
        let scatter = map_reduce(
            n,
            |range| {
                let mut s = vec![0.0; k * dim * dim];
                let mut diff = vec![0.0; dim];
                for i in range {
                    let x = &data[i * dim..(i + 1) * dim];
                    for c in 0..k {
                        let g = resp_ref[i * k + c];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..dim {
                            diff[j] = x[j] - means_ref[c][j];
                        }
                        let block = &mut s[c * dim * dim..(c + 1) * dim * dim];
                        for a in 0..dim {
                            let ga = g * diff[a];
                            for b in 0..=a {
                                block[a * dim + b] += ga * diff[b];
                            }
                        }
                    }
                }
                s
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
        .expect("non-empty data");

        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            if suff.nk[c] <= 1e-10 {
                covs.push(params.covariances[c].clone());
                continue;
            }
            let block = &scatter[c * dim * dim..(c + 1) * dim * dim];
            let mut cov = vec![0.0; dim * dim];
            for a in 0..dim {
                for b in 0..=a {
                    let v = block[a * dim + b] / suff.nk[c];
                    cov[a * dim + b] = v;
                    cov[b * dim + a] = v;
                }
                cov[a * dim + a] += ridge[a];
            }
            covs.push(repair_covariance(cov, dim, &ridge));
        }
        let weights = normalized(suff.nk.clone());
        params = GmmParams::new(weights, means, covs)?;
    }

    Ok(EmFit {
        params,
        trace,
        converged,
    })
}

/// Convenience wrapper: k-means init followed by EM.
pub fn fit(data: &[f64], dim: usize, cfg: &GmmConfig, seed: u64) -> Result<EmFit> {
    let init = init_kmeans(data, dim, cfg.components, cfg.subset_fraction, seed)?;
    fit_em(data, dim, init, cfg.max_iter, cfg.tol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub components: usize,
    pub subset_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 2,
            subset_fraction: 0.2,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, centers: &[[f64; 2]], seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * 2);
        for i in 0..n {
            let c = centers[i % centers.len()];
            for v in c {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(v + 0.5 * z);
            }
        }
        out
    }

    /// Independent density: explicit inverse via nalgebra and the quadratic form.
    fn brute_log_pdf(x: &[f64], mu: &[f64], cov: &[f64]) -> f64 {
        let d = x.len();
        let m = DMatrix::from_row_slice(d, d, cov);
        let inv = m.clone().try_inverse().unwrap();
        let diff = nalgebra::DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
        let q = (diff.transpose() * inv * &diff)[(0, 0)];
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + m.determinant().ln() + q)
    }

    fn spd(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = DMatrix::from_row_slice(d, d, &a);
        let s = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
        (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).collect()
    }

    #[test]
    fn standard_normal_at_origin() {
        let p = GmmParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        let v = p.component_log_pdfs(&[0.0]).unwrap()[0];
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        assert_eq!(p.log_pdf(&[0.0]).unwrap(), v);
    }

    #[test]
    fn density_matches_quadratic_form_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let cov = spd(&mut rng, 3);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = GmmParams::new(vec![1.0], vec![mu.clone()], vec![cov.clone()]).unwrap();
            let got = p.component_log_pdfs(&x).unwrap()[0];
            assert!((got - brute_log_pdf(&x, &mu, &cov)).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_is_the_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cov = spd(&mut rng, 2);
        let p = GmmParams::new(vec![1.0], vec![vec![1.0, -1.0]], vec![cov]).unwrap();
        let at_mean = p.component_log_pdfs(&[1.0, -1.0]).unwrap()[0];
        for t in [-1.0, -0.1, 0.05, 2.0] {
            assert!(p.component_log_pdfs(&[1.0 + t, -1.0 + 0.5 * t]).unwrap()[0] < at_mean);
        }
    }

    #[test]
    fn mixture_by_direct_summation() {
        let p = GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![-1.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let dens = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expected = (0.5 * dens(0.0, -1.0) + 0.5 * dens(0.0, 1.0)).ln();
        assert!((p.log_pdf(&[0.0]).unwrap() - expected).abs() < 1e-12);
        // tie at the midpoint goes to component 0
        assert_eq!(p.assign(&[0.0]).unwrap(), 0);
        assert_eq!(p.assign(&[-1.0]).unwrap(), 0);
        assert_eq!(p.assign(&[1.0]).unwrap(), 1);
    }

    #[test]
    fn stable_far_from_data() {
        let p = GmmParams::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 0.0], vec![5.0, 5.0]],
            vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.01, 0.0, 0.0, 0.01]],
        )
        .unwrap();
        let v = p.log_pdf(&[1e6, -1e6]).unwrap();
        assert!(v.is_finite());
        let comps = p.component_log_pdfs(&[1e6, -1e6]).unwrap();
        let max = comps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(v <= max + 2f64.ln() + 1e-9);
    }

    #[test]
    fn assign_matches_argmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GmmParams::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![-1.0, 3.0]],
            vec![spd(&mut rng, 2), spd(&mut rng, 2), spd(&mut rng, 2)],
        )
        .unwrap();
        for _ in 0..200 {
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..5.0)];
            let scores: Vec<f64> = (0..3)
                .map(|i| p.weights()[i] * brute_log_pdf(&x, &p.means()[i], &p.covariances()[i]).exp())
                .collect();
            let mut best = 0;
            for i in 1..3 {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            assert_eq!(p.assign(&x).unwrap(), best);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = GmmParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        assert!(p.log_pdf(&[0.0, 1.0]).is_err());
        assert!(p.component_log_pdfs(&[]).is_err());
    }

    #[test]
    fn single_component_is_sample_moments() {
        let data = blobs(400, &[[1.0, 2.0]], 1);
        let init = init_kmeans(&data, 2, 1, 1.0, 0).unwrap();
        let n = 400.0;
        let mean: Vec<f64> = (0..2).map(|j| data.iter().skip(j).step_by(2).sum::<f64>() / n).collect();
        assert!((init.means()[0][0] - mean[0]).abs() < 1e-12);
        let fit = fit_em(&data, 2, init, 50, 1e-12).unwrap();
        let ridge = ridge_for(&data, 2);
        let mut cov = [0.0; 4];
        for r in data.chunks(2) {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a * 2 + b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n;
                }
            }
        }
        cov[0] += ridge[0];
        cov[3] += ridge[1];
        for j in 0..2 {
            assert!((fit.params.means()[0][j] - mean[j]).abs() < 1e-12);
        }
        for (a, b) in fit.params.covariances()[0].iter().zip(cov) {
            assert!((a - b).abs() < 1e-12);
        }
        // closed form after one M-step: the second likelihood equals the third
        assert!(fit.trace.len() <= 3, "{:?}", fit.trace);
    }

    #[test]
    fn two_blobs_recovered() {
        let truth = [[-3.0, 0.0], [3.0, 1.0]];
        let data = blobs(4000, &truth, 2);
        let init = init_kmeans(&data, 2, 2, 0.2, 5).unwrap();
        let mut means: Vec<Vec<f64>> = init.means().to_vec();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (m, t) in means.iter().zip(truth) {
            assert!((m[0] - t[0]).abs() < 0.1 && (m[1] - t[1]).abs() < 0.1, "{m:?}");
        }
        let fit = fit_em(&data, 2, init, 100, 1e-9).unwrap();
        let mut means: Vec<Vec<f64>> = fit.params.means().to_vec();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (m, t) in means.iter().zip(truth) {
            assert!((m[0] - t[0]).abs() < 0.05 && (m[1] - t[1]).abs() < 0.05, "{m:?}");
        }
        let w = fit.params.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn em_likelihood_monotone() {
        let data = blobs(3000, &[[-1.0, 0.0], [1.0, 0.5], [0.0, 2.0]], 8);
        let init = init_kmeans(&data, 2, 3, 0.2, 1).unwrap();
        let fit = fit_em(&data, 2, init, 60, 0.0).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn too_many_clusters_for_distinct_points() {
        let data = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        assert!(matches!(init_kmeans(&data, 2, 3, 1.0, 0), Err(Error::DegenerateClusters(_))));
        assert!(init_kmeans(&data, 2, 2, 1.0, 0).is_ok());
    }

    #[test]
    fn empty_cluster_reseeded() {
        // one far outlier plus a tight duplicate-heavy group; k-means++ with
        // k = 3 can strand a centroid, which must be re-seeded
        let mut data = Vec::new();
        for _ in 0..50 {
            data.extend_from_slice(&[0.0, 0.0]);
        }
        data.extend_from_slice(&[0.1, 0.0, 100.0, 100.0]);
        for seed in 0..20 {
            let p = init_kmeans(&data, 2, 3, 1.0, seed).unwrap();
            assert!(p.weights().iter().all(|w| *w > 0.0), "{:?}", p.weights());
        }
        let rows: Vec<&[f64]> = data.chunks(2).collect();
        let mut centroids = vec![vec![0.0, 0.0], vec![100.0, 100.0], vec![-50.0, -50.0]];
        let mut assignment: Vec<usize> = rows.iter().map(|r| nearest(&centroids, r).0).collect();
        reseed_empty(&rows, &mut centroids, &mut assignment);
        assert!((0..3).all(|c| assignment.contains(&c)));
    }

    #[test]
    fn serde_roundtrip() {
        let p = GmmParams::new(
            vec![0.25, 0.75],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.2, 0.2, 1.0], vec![2.0, 0.0, 0.0, 0.5]],
        )
        .unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: GmmParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<GmmParams>(r#"{"weights":[0.5],"means":[[0]],"covariances":[[[1]]]}"#).is_err());
    }
}
