//! Batch-balanced adaptive landmark smoothing for high-dimensional
//! profiling data.
//!
//! The pipeline builds batch-reweighted local-scale affinities, samples
//! landmark rows with an inverse-coverage adaptive rule, and smooths
//! every profile through the row-normalized sampled operator — all
//! without materializing the full n x n affinity matrix. Supporting
//! modules provide robust preprocessing, a metric suite, synthetic
//! generators and a Monte Carlo harness for the method's guarantees.

pub mod cli;
pub mod core_model;
pub mod error;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod preprocess;
pub mod sampler;
pub mod smoother;
pub mod synthetic;
pub mod theory;

pub use core_model::{BatchLabels, ClusterLabels, DenseLabels, HyperParams, ProfileMatrix};
pub use error::{BalansError, Result};
pub use pipeline::{correct, CorrectionInfo, CorrectionOutcome};
