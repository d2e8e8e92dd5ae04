//! Synthetic mixed-type data with a controllable number of abnormal variables.
//!
//! Normal rows come from a two-component Gaussian mixture over the continuous
//! features; every categorical feature (4 levels) is drawn conditionally on
//! the component. Anomalous rows perturb exactly `nv` randomly chosen
//! variables: continuous values are pushed at least 6 marginal standard
//! deviations away from the marginal mean, categorical values are set to the
//! least likely level.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Label, MixedRecord};
use super::schema::{CategoricalFeature, Schema};
use crate::error::{Error, Result};

const COMPONENT_WEIGHTS: [f64; 2] = [0.6, 0.4];
const COMPONENT_OFFSET: f64 = 1.5;
const LEVEL_PROBS: [[f64; 4]; 2] = [[0.50, 0.30, 0.15, 0.05], [0.30, 0.50, 0.15, 0.05]];
const RARE_LEVEL: u32 = 3;
/// Minimum shift, in marginal standard deviations, of a perturbed continuous value.
pub const SHIFT_SIGMAS: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d_cont: usize,
    pub d_cat: usize,
    pub nv: usize,
    pub anomaly_ratio: f64,
    pub seed: u64,
}

/// Generator parameters needed to audit a record against the normal support.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTruth {
    pub marginal_mean: Vec<f64>,
    pub marginal_sd: Vec<f64>,
    pub rare_level: Vec<u32>,
}

impl GeneratorTruth {
    fn new(d_cont: usize, d_cat: usize) -> Self {
        let means = component_means();
        let mean = COMPONENT_WEIGHTS[0] * means[0] + COMPONENT_WEIGHTS[1] * means[1];
        let var = 1.0
            + COMPONENT_WEIGHTS[0] * (means[0] - mean).powi(2)
            + COMPONENT_WEIGHTS[1] * (means[1] - mean).powi(2);
        Self {
            marginal_mean: vec![mean; d_cont],
            marginal_sd: vec![var.sqrt(); d_cont],
            rare_level: vec![RARE_LEVEL; d_cat],
        }
    }

    /// Variable indices (continuous first, then categorical) whose values lie
    /// outside the normal support.
    pub fn abnormal_variables(&self, r: &MixedRecord) -> Vec<usize> {
        let d_cont = self.marginal_mean.len();
        let mut out = Vec::new();
        for (i, v) in r.x.iter().enumerate() {
            if (v - self.marginal_mean[i]).abs() >= SHIFT_SIGMAS * self.marginal_sd[i] {
                out.push(i);
            }
        }
        for (i, l) in r.levels.iter().enumerate() {
            if *l == Some(self.rare_level[i]) {
                out.push(d_cont + i);
            }
        }
        out
    }
}

fn component_means() -> [f64; 2] {
    [-COMPONENT_OFFSET, COMPONENT_OFFSET]
}

pub struct SyntheticData {
    pub dataset: Dataset,
    /// Perturbed variable indices per record (empty for normal rows).
    pub perturbed: Vec<Vec<usize>>,
    pub truth: GeneratorTruth,
}

pub fn generate_synthetic(
    n: usize,
    d_cont: usize,
    d_cat: usize,
    nv: usize,
    anomaly_ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_with_truth(&SyntheticSpec {
        n,
        d_cont,
        d_cat,
        nv,
        anomaly_ratio,
        seed,
    })
    .map(|s| s.dataset)
}

pub fn generate_with_truth(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let SyntheticSpec {
        n,
        d_cont,
        d_cat,
        nv,
        anomaly_ratio,
        seed,
    } = *spec;
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if d_cont + d_cat == 0 {
        return Err(Error::invalid("d_cont + d_cat", "need at least one variable"));
    }
    if nv > d_cont + d_cat {
        return Err(Error::invalid("nv", format!("{nv} exceeds the {} variables", d_cont + d_cat)));
    }
    if !(0.0..0.5).contains(&anomaly_ratio) {
        return Err(Error::invalid("anomaly_ratio", format!("{anomaly_ratio} is outside [0, 0.5)")));
    }
    if anomaly_ratio > 0.0 && nv == 0 {
        return Err(Error::invalid("nv", "anomalies need at least one perturbed variable"));
    }

    let schema = Schema::new(
        (0..d_cont).map(|i| format!("x{i}")).collect(),
        (0..d_cat)
            .map(|i| CategoricalFeature::new(format!("c{i}"), (0..4).map(|l| format!("L{l}")).collect()))
            .collect(),
        Some("label".into()),
    )?;
    let truth = GeneratorTruth::new(d_cont, d_cat);
    let means = component_means();
    let n_anomalous = (anomaly_ratio * n as f64).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // anomalous rows are spread uniformly over the output order
    let anomalous_rows: std::collections::HashSet<usize> = sample(&mut rng, n, n_anomalous).into_iter().collect();

    let mut records = Vec::with_capacity(n);
    let mut perturbed = Vec::with_capacity(n);
    for row in 0..n {
        let component = usize::from(rng.random::<f64>() >= COMPONENT_WEIGHTS[0]);
        let mut x: Vec<f64> = (0..d_cont)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                means[component] + z
            })
            .collect();
        let mut levels: Vec<Option<u32>> = (0..d_cat)
            .map(|_| Some(draw_level(&mut rng, &LEVEL_PROBS[component])))
            .collect();

        if anomalous_rows.contains(&row) {
            let chosen: Vec<usize> = {
                let mut v = sample(&mut rng, d_cont + d_cat, nv).into_vec();
                v.sort_unstable();
                v
            };
            // untouched categoricals are kept off the rare level so the
            // abnormal-variable count is exactly nv
            for (i, level) in levels.iter_mut().enumerate() {
                while *level == Some(RARE_LEVEL) && !chosen.contains(&(d_cont + i)) {
                    *level = Some(draw_level(&mut rng, &LEVEL_PROBS[component]));
                }
            }
            for &v in &chosen {
                if v < d_cont {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let k = SHIFT_SIGMAS + rng.random::<f64>();
                    x[v] = truth.marginal_mean[v] + sign * k * truth.marginal_sd[v];
                } else {
                    levels[v - d_cont] = Some(RARE_LEVEL);
                }
            }
            records.push(MixedRecord::new(x, levels, Some(Label::Anomalous)));
            perturbed.push(chosen);
        } else {
            records.push(MixedRecord::new(x, levels, Some(Label::Normal)));
            perturbed.push(Vec::new());
        }
    }

    Ok(SyntheticData {
        dataset: Dataset::new(schema, records)?,
        perturbed,
        truth,
    })
}

fn draw_level(rng: &mut impl Rng, probs: &[f64; 4]) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (l, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return l as u32;
        }
    }
    (probs.len() - 1) as u32
}
