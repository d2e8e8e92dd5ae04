use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_normal_labels() -> Vec<String> {
    ["normal", "normal.", "0", "benign", "BENIGN", "false"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// A categorical column together with its level dictionary.
///
/// An empty `levels` list means "build the dictionary from the data in
/// first-seen order"; a non-empty list is frozen and unseen strings map to
/// the reserved unknown level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    #[serde(default)]
    pub levels: Vec<String>,
}

impl CategoricalFeature {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            levels,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, value: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == value).map(|i| i as u32)
    }
}

/// Column layout of a mixed dataset. This is also the JSON sidecar format:
/// `{"continuous": [...], "categorical": [{"name", "levels"}], "label": name}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<CategoricalFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Label strings treated as normal; every other label value is anomalous.
    #[serde(default = "default_normal_labels")]
    pub normal_labels: Vec<String>,
}

impl Schema {
    pub fn new(
        continuous: Vec<String>,
        categorical: Vec<CategoricalFeature>,
        label: Option<String>,
    ) -> Result<Self> {
        let schema = Self {
            continuous,
            categorical,
            label,
            normal_labels: default_normal_labels(),
        };
        schema.check_names()?;
        Ok(schema)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: Schema =
            serde_json::from_str(text).map_err(|e| Error::json("schema sidecar", e))?;
        schema.check_names()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Names must be unique across continuous, categorical and label columns,
    /// and level strings unique within a feature.
    pub fn check_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let all = self
            .continuous
            .iter()
            .chain(self.categorical.iter().map(|c| &c.name))
            .chain(self.label.iter());
        for name in all {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {name:?}")));
            }
        }
        for feature in &self.categorical {
            let mut levels = HashSet::new();
            for level in &feature.levels {
                if !levels.insert(level.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate level {level:?} in categorical feature {:?}",
                        feature.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full validation once every level dictionary is populated.
    pub fn validate(&self) -> Result<()> {
        self.check_names()?;
        for feature in &self.categorical {
            if feature.cardinality() < 2 {
                return Err(Error::Schema(format!(
                    "categorical feature {:?} has {} level(s); at least 2 are required",
                    feature.name,
                    feature.cardinality()
                )));
            }
        }
        Ok(())
    }

    pub fn continuous_dim(&self) -> usize {
        self.continuous.len()
    }

    pub fn categorical_dim(&self) -> usize {
        self.categorical.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.cardinality()).collect()
    }

    /// Width of the one-hot vector, `k + 1`.
    pub fn one_hot_width(&self) -> usize {
        self.categorical.iter().map(|c| c.cardinality()).sum()
    }

    /// Start offset of each categorical block in the one-hot vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.categorical.len());
        let mut acc = 0;
        for c in &self.categorical {
            offsets.push(acc);
            acc += c.cardinality();
        }
        offsets
    }

    /// Maps a one-hot index back to `(feature index, level index)`.
    pub fn term_owner(&self, j: usize) -> Option<(usize, u32)> {
        let mut start = 0;
        for (f, c) in self.categorical.iter().enumerate() {
            let end = start + c.cardinality();
            if j < end {
                return Some((f, (j - start) as u32));
            }
            start = end;
        }
        None
    }

    pub fn is_normal_label(&self, value: &str) -> bool {
        self.normal_labels.iter().any(|l| l == value)
    }

    /// Global feature index used by the surrogate tree: continuous features
    /// first, then categorical ones.
    pub fn feature_name(&self, index: usize) -> &str {
        if index < self.continuous.len() {
            &self.continuous[index]
        } else {
            &self.categorical[index - self.continuous.len()].name
        }
    }

    pub fn num_features(&self) -> usize {
        self.continuous.len() + self.categorical.len()
    }

    /// Schemas are compatible when they share column names and every level
    /// dictionary of `self` is a prefix of the other's.
    pub fn is_compatible_with(&self, other: &Schema) -> bool {
        self.continuous == other.continuous
            && self.categorical.len() == other.categorical.len()
            && self
                .categorical
                .iter()
                .zip(&other.categorical)
                .all(|(a, b)| a.name == b.name && b.levels.starts_with(&a.levels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(
            vec!["a".into(), "b".into()],
            vec![
                CategoricalFeature::new("c", vec!["x".into(), "y".into()]),
                CategoricalFeature::new("d", vec!["p".into(), "q".into(), "r".into()]),
            ],
            Some("label".into()),
        )
        .unwrap()
    }

    #[test]
    fn width_and_offsets() {
        let s = schema();
        assert_eq!(s.one_hot_width(), 5);
        assert_eq!(s.block_offsets(), vec![0, 2]);
        assert_eq!(s.term_owner(0), Some((0, 0)));
        assert_eq!(s.term_owner(3), Some((1, 1)));
        assert_eq!(s.term_owner(5), None);
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Schema::new(
            vec!["a".into()],
            vec![CategoricalFeature::new("a", vec!["x".into(), "y".into()])],
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate column name"));
    }

    #[test]
    fn single_level_rejected_on_validate() {
        let s = Schema::new(
            vec![],
            vec![CategoricalFeature::new("c", vec!["only".into()])],
            None,
        )
        .unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_sidecar_roundtrip() {
        let text = r#"{"continuous":["a"],"categorical":[{"name":"c","levels":["x","y"]}],"label":"cls"}"#;
        let s = Schema::from_json_str(text).unwrap();
        assert_eq!(s.label.as_deref(), Some("cls"));
        assert!(s.is_normal_label("normal"));
        let back = Schema::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(s, back);
    }
}
