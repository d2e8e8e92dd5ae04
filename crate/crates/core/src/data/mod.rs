//! Dataset ingestion, encoding and partitioning.

mod dataset;
mod load;
mod onehot;
mod schema;
mod split;
pub mod synth;

pub use dataset::{standardize, Dataset, FeatureStats, Label, MixedRecord, Standardization};
pub use load::{load_dataset, load_dataset_from_reader, write_dataset_csv};
pub use onehot::{active_bits, decode, one_hot, unit_mask, OneHotView};
pub use schema::{CategoricalFeature, Schema};
pub use split::{split, split_indices};
pub use synth::generate_synthetic;
