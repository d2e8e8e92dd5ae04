//! Explainable anomaly detection on mixed numerical and categorical data.
//!
//! The detector factorizes the joint density as `P(y, x) = P(y | x) P(x)`:
//! a Gaussian mixture models the continuous part and a shared-weight logistic
//! model scores each one-hot categorical bit given the continuous values.
//! Detections are explained globally by a pruned regression tree fitted on
//! anomaly-rank targets and locally by path transcriptions or rule-based
//! reports.

pub mod categorical;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gmm;
pub mod parallel;
pub mod pipeline;
pub mod tree;

pub use error::{Error, Result};
