use serde::{Deserialize, Serialize};

use super::schema::Schema;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }
}

/// One row: continuous values plus categorical level indices.
///
/// `None` in `levels` is the reserved unknown level (a value not present in
/// the frozen dictionary); it encodes as an all-zero one-hot block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedRecord {
    pub x: Vec<f64>,
    pub levels: Vec<Option<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl MixedRecord {
    pub fn new(x: Vec<f64>, levels: Vec<Option<u32>>, label: Option<Label>) -> Self {
        Self { x, levels, label }
    }

    pub fn check(&self, schema: &Schema) -> Result<()> {
        if self.x.len() != schema.continuous_dim() {
            return Err(Error::DimensionMismatch {
                expected: schema.continuous_dim(),
                actual: self.x.len(),
            });
        }
        if self.levels.len() != schema.categorical_dim() {
            return Err(Error::DimensionMismatch {
                expected: schema.categorical_dim(),
                actual: self.levels.len(),
            });
        }
        for (feature, level) in schema.categorical.iter().zip(&self.levels) {
            if let Some(l) = level {
                if *l as usize >= feature.cardinality() {
                    return Err(Error::Encoding(format!(
                        "level {l} out of range for feature {:?} (cardinality {})",
                        feature.name,
                        feature.cardinality()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-feature z-score parameters. Constant features carry `std == 0` and map
/// to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub stats: Vec<FeatureStats>,
}

impl Standardization {
    /// Population mean and standard deviation, two-pass.
    pub fn fit(records: &[MixedRecord], dim: usize) -> Self {
        let n = records.len().max(1) as f64;
        let stats = (0..dim)
            .map(|i| {
                let mean = records.iter().map(|r| r.x[i]).sum::<f64>() / n;
                let var = records.iter().map(|r| (r.x[i] - mean).powi(2)).sum::<f64>() / n;
                FeatureStats {
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        Self { stats }
    }

    pub fn dim(&self) -> usize {
        self.stats.len()
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        for (v, s) in x.iter_mut().zip(&self.stats) {
            *v = if s.std > 0.0 { (*v - s.mean) / s.std } else { 0.0 };
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    /// Maps a standardized value of feature `i` back to original units.
    pub fn original_value(&self, i: usize, z: f64) -> f64 {
        let s = &self.stats[i];
        if s.std > 0.0 {
            z * s.std + s.mean
        } else {
            s.mean
        }
    }
}

/// The corpus: schema, ordered records and, once standardized, the
/// statistics used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<MixedRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<MixedRecord>) -> Result<Self> {
        for r in &records {
            r.check(&schema)?;
        }
        Ok(Self {
            schema,
            records,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardization.is_some()
    }

    pub fn has_labels(&self) -> bool {
        self.records.iter().any(|r| r.label.is_some())
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Continuous block as a row-major matrix.
    pub fn continuous_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.schema.continuous_dim());
        for r in &self.records {
            out.extend_from_slice(&r.x);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            standardization: self.standardization.clone(),
        }
    }

    /// Applies already-fitted statistics (e.g. from a training partition).
    pub fn with_standardization(&self, stats: &Standardization) -> Result<Dataset> {
        if self.is_standardized() {
            return Err(Error::AlreadyStandardized);
        }
        if stats.dim() != self.schema.continuous_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.schema.continuous_dim(),
                actual: stats.dim(),
            });
        }
        let records = self
            .records
            .iter()
            .map(|r| MixedRecord {
                x: stats.transform(&r.x),
                levels: r.levels.clone(),
                label: r.label,
            })
            .collect();
        Ok(Dataset {
            schema: self.schema.clone(),
            records,
            standardization: Some(stats.clone()),
        })
    }
}

/// Z-scores every continuous feature; constant columns become all-zero.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    if ds.is_standardized() {
        return Err(Error::AlreadyStandardized);
    }
    let stats = Standardization::fit(&ds.records, ds.schema.continuous_dim());
    ds.with_standardization(&stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::CategoricalFeature;
    use proptest::prelude::*;

    fn one_col(values: &[f64]) -> Dataset {
        let schema = Schema::new(vec!["v".into()], vec![], None).unwrap();
        let records = values
            .iter()
            .map(|&v| MixedRecord::new(vec![v], vec![], None))
            .collect();
        Dataset::new(schema, records).unwrap()
    }

    #[test]
    fn zscore_closed_form() {
        let ds = standardize(&one_col(&[2.0, 4.0, 6.0])).unwrap();
        let got: Vec<f64> = ds.records.iter().map(|r| r.x[0]).collect();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
        let stats = ds.standardization.as_ref().unwrap();
        assert!((stats.original_value(0, got[2]) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let ds = standardize(&one_col(&[5.0, 5.0, 5.0])).unwrap();
        assert!(ds.records.iter().all(|r| r.x[0] == 0.0));
    }

    #[test]
    fn restandardizing_is_an_error() {
        let ds = standardize(&one_col(&[1.0, 2.0])).unwrap();
        assert!(matches!(standardize(&ds), Err(Error::AlreadyStandardized)));
    }

    #[test]
    fn level_out_of_range_rejected() {
        let schema = Schema::new(
            vec![],
            vec![CategoricalFeature::new("c", vec!["a".into(), "b".into()])],
            None,
        )
        .unwrap();
        let r = MixedRecord::new(vec![], vec![Some(2)], None);
        assert!(Dataset::new(schema, vec![r]).is_err());
    }

    proptest! {
        #[test]
        fn standardized_moments(values in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let ds = standardize(&one_col(&values)).unwrap();
            let n = values.len() as f64;
            let xs: Vec<f64> = ds.records.iter().map(|r| r.x[0]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let raw_sd = ds.standardization.as_ref().unwrap().stats[0].std;
            prop_assert!(mean.abs() < 1e-9);
            if raw_sd > 1e-6 {
                prop_assert!((sd - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(raw_sd == 0.0 || sd <= 1.0 + 1e-9);
            }
        }
    }
}
