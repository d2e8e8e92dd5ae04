use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Label};
use crate::error::{Error, Result};

/// Index-level train/test partition.
///
/// Rows are shuffled with `seed`; the first `round(train_fraction * n)` form
/// the training candidates. Anomalous-labelled candidates are moved to the
/// test side so the training partition only holds normal (or unlabelled)
/// records.
pub fn split_indices(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::invalid("train_fraction", format!("{train_fraction} is outside (0, 1]")));
    }
    if ds.is_empty() {
        return Err(Error::InsufficientData("cannot split an empty dataset".into()));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (pos, &i) in order.iter().enumerate() {
        let anomalous = ds.records[i].label == Some(Label::Anomalous);
        if pos < n_train && !anomalous {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    Ok((train, test))
}

pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds, train_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::MixedRecord;
    use crate::data::schema::Schema;
    use proptest::prelude::*;

    fn rows(n: usize, anomalous_every: Option<usize>) -> Dataset {
        let schema = Schema::new(vec!["v".into()], vec![], Some("y".into())).unwrap();
        let records = (0..n)
            .map(|i| {
                let label = match anomalous_every {
                    Some(k) if i % k == 0 => Label::Anomalous,
                    _ => Label::Normal,
                };
                MixedRecord::new(vec![i as f64], vec![], Some(label))
            })
            .collect();
        Dataset::new(schema, records).unwrap()
    }

    #[test]
    fn seventy_thirty() {
        let (tr, te) = split(&rows(100, None), 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (70, 30));
    }

    #[test]
    fn full_fraction() {
        let (tr, te) = split(&rows(10, None), 1.0, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (10, 0));
    }

    #[test]
    fn deterministic() {
        let ds = rows(50, Some(7));
        assert_eq!(split_indices(&ds, 0.7, 9).unwrap(), split_indices(&ds, 0.7, 9).unwrap());
        assert_ne!(split_indices(&ds, 0.7, 9).unwrap(), split_indices(&ds, 0.7, 10).unwrap());
    }

    #[test]
    fn training_is_normal_only() {
        let (tr, _) = split(&rows(200, Some(5)), 0.7, 4).unwrap();
        assert!(tr.records.iter().all(|r| r.label == Some(Label::Normal)));
    }

    #[test]
    fn bad_fraction() {
        assert!(split(&rows(5, None), 0.0, 1).is_err());
        assert!(split(&rows(5, None), 1.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 1usize..300, frac in 0.01f64..=1.0, seed in any::<u64>(), every in 1usize..10) {
            let ds = rows(n, Some(every));
            let (tr, te) = split_indices(&ds, frac, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
