//! Decorrelation-regularized k-means.
//!
//! Clusters binary data while learning one global sample weight vector that
//! balances, for every feature, the weighted means of the other features
//! between samples that have the feature and samples that do not. The
//! weights reweight the k-means loss so that spurious feature correlations
//! introduced by biased sampling have less pull on the clustering.
//!
//! The crate also provides the comparison baselines, NMI/ARI, a feature
//! cross-covariance diagnostic, CSV I/O and a synthetic biased-data
//! generator. With the default `parallel` feature, per-sample and per-restart
//! work runs on rayon; results are identical with the feature disabled.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod decorrelation;
pub mod error;
pub mod metrics;
pub mod par;
pub mod solver;
pub mod types;

pub use error::{DckmError, Result};
pub use solver::{fit, fit_restarts, FitResult, RestartReport};
pub use types::{
    one_hot_rows, validate_data, AssignmentMatrix, CentroidMatrix, DataMatrix, HyperParams, SampleWeights,
};
