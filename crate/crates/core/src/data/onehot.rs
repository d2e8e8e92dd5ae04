use super::dataset::MixedRecord;
use super::schema::Schema;
use crate::error::{Error, Result};

/// Binary one-hot vector `y = (y^0, ..., y^k)` for one record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OneHotView {
    pub y: Vec<u8>,
}

impl OneHotView {
    pub fn width(&self) -> usize {
        self.y.len()
    }

    /// The unit vector `m_j` of the same width.
    pub fn mask(&self, j: usize) -> Result<Vec<f64>> {
        unit_mask(j, self.width())
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.y.iter().enumerate().filter(|(_, b)| **b == 1).map(|(j, _)| j)
    }
}

pub fn unit_mask(j: usize, width: usize) -> Result<Vec<f64>> {
    if j >= width {
        return Err(Error::Encoding(format!("mask index {j} out of range for width {width}")));
    }
    let mut m = vec![0.0; width];
    m[j] = 1.0;
    Ok(m)
}

/// Positions of the active bits, one per known categorical level. Unknown
/// levels contribute nothing.
pub fn active_bits(levels: &[Option<u32>], offsets: &[usize]) -> Vec<usize> {
    levels
        .iter()
        .zip(offsets)
        .filter_map(|(l, off)| l.map(|l| off + l as usize))
        .collect()
}

pub fn one_hot(record: &MixedRecord, schema: &Schema) -> Result<OneHotView> {
    if record.levels.len() != schema.categorical_dim() {
        return Err(Error::DimensionMismatch {
            expected: schema.categorical_dim(),
            actual: record.levels.len(),
        });
    }
    let mut y = vec![0u8; schema.one_hot_width()];
    let offsets = schema.block_offsets();
    for ((level, feature), off) in record.levels.iter().zip(&schema.categorical).zip(offsets) {
        if let Some(l) = level {
            if *l as usize >= feature.cardinality() {
                return Err(Error::Encoding(format!(
                    "level {l} out of range for feature {:?}",
                    feature.name
                )));
            }
            y[off + *l as usize] = 1;
        }
    }
    Ok(OneHotView { y })
}

/// Inverse of [`one_hot`]; an all-zero block decodes to the unknown level.
pub fn decode(view: &OneHotView, schema: &Schema) -> Result<Vec<Option<u32>>> {
    if view.width() != schema.one_hot_width() {
        return Err(Error::DimensionMismatch {
            expected: schema.one_hot_width(),
            actual: view.width(),
        });
    }
    let mut out = Vec::with_capacity(schema.categorical_dim());
    let mut start = 0;
    for feature in &schema.categorical {
        let block = &view.y[start..start + feature.cardinality()];
        let ones: Vec<usize> = block.iter().enumerate().filter(|(_, b)| **b == 1).map(|(i, _)| i).collect();
        match ones.as_slice() {
            [] => out.push(None),
            [i] => out.push(Some(*i as u32)),
            _ => {
                return Err(Error::Encoding(format!(
                    "block for {:?} has {} active bits",
                    feature.name,
                    ones.len()
                )))
            }
        }
        start += feature.cardinality();
    }
    Ok(out)
}
