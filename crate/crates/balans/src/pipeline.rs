//! End-to-end correction: adaptive landmark sampling over the
//! batch-balanced kernel, followed by low-rank neighborhood smoothing.

use serde::Serialize;

use crate::core_model::{
    validate_inputs, BatchLabels, HyperParams, ProfileMatrix, SparseAffinityRows,
};
use crate::error::Result;
use crate::preprocess::pca_project;
use crate::sampler::{run_sampling, TraceEvent};
use crate::smoother::{row_normalize, smooth};

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionInfo {
    /// Number of sampled landmark rows.
    pub m: usize,
    /// Samples that received no affinity mass and pass through unchanged.
    pub uncovered: usize,
}

pub struct CorrectionOutcome {
    pub corrected: ProfileMatrix,
    pub info: CorrectionInfo,
    pub trace: Vec<TraceEvent>,
    /// The sampled affinity rows the smoothing operator was built from.
    pub rows: SparseAffinityRows,
}

/// Runs the full correction. Affinities are computed in PCA space when
/// `params.pca_dims` is set; smoothing is always applied to the original
/// feature matrix so the output keeps the input's columns.
pub fn correct(
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    params: &HyperParams,
    collect_trace: bool,
) -> Result<CorrectionOutcome> {
    validate_inputs(profiles, batches, params)?;
    let projected = match params.pca_dims {
        Some(dims) if dims < profiles.d() => Some(pca_project(profiles, dims)?),
        _ => None,
    };
    let kernel_input = projected.as_ref().unwrap_or(profiles);

    let mut trace = Vec::new();
    let rows = if collect_trace {
        let mut record = |e: &TraceEvent| trace.push(e.clone());
        run_sampling(kernel_input, batches, params, Some(&mut record))?
    } else {
        run_sampling(kernel_input, batches, params, None)?
    };
    let m = rows.m();
    let op = row_normalize(&rows)?;
    let (corrected, uncovered) = smooth(&op, profiles)?;
    Ok(CorrectionOutcome {
        corrected,
        info: CorrectionInfo { m, uncovered },
        trace,
        rows,
    })
}
