//! Coverage-based adaptive row sampling with per-block resets and the
//! no-new-coverage stopping rule.
//!
//! The sampling distribution is driven by the block coverage vector:
//! uniform over zero-coverage eligible indices when any exist, otherwise
//! proportional to inverse block coverage. Already-sampled indices are
//! never redrawn. The stopping counter tracks consecutive steps in which
//! a sampled row added essentially no first-time coverage relative to
//! its own support size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::core_model::{
    BatchLabels, HyperParams, ProfileMatrix, SparseAffinityRows, SparseRow,
};
use crate::error::{BalansError, Result};
use crate::kernel;

/// Anything that can produce the affinity row for a given anchor index.
pub trait RowSource {
    fn n(&self) -> usize;
    fn row(&self, anchor: usize) -> Result<SparseRow>;
}

/// Rows computed on demand from profiles via the local-scale kernel.
pub struct KernelRowSource<'a> {
    pub profiles: &'a ProfileMatrix,
    pub batches: &'a BatchLabels,
    pub k: usize,
}

impl RowSource for KernelRowSource<'_> {
    fn n(&self) -> usize {
        self.profiles.n()
    }

    fn row(&self, anchor: usize) -> Result<SparseRow> {
        kernel::compute_sparse_row(self.profiles, self.batches, anchor, self.k)
    }
}

/// Rows read from a precomputed symmetric affinity matrix. Used by the
/// theory harness, where entries may exceed 1 and no sparsification is
/// applied; exact zeros are dropped.
pub struct MatrixRowSource<'a> {
    pub matrix: &'a ndarray::Array2<f64>,
}

impl RowSource for MatrixRowSource<'_> {
    fn n(&self) -> usize {
        self.matrix.nrows()
    }

    fn row(&self, anchor: usize) -> Result<SparseRow> {
        Ok(SparseRow::from_pairs(
            self.matrix
                .row(anchor)
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect(),
        ))
    }
}

/// Coverage bookkeeping for one sampling run.
#[derive(Debug, Clone)]
pub struct CoverageState {
    /// Cumulative affinity received by each column (diagnostics + delta).
    pub cumulative: Vec<f64>,
    /// Coverage accumulated within the current block; drives sampling.
    pub block: Vec<f64>,
    /// Sampled indices, in draw order.
    pub sampled: Vec<usize>,
    sampled_mask: Vec<bool>,
    pub no_change_count: usize,
    pub steps_in_block: usize,
    block_len: usize,
}

impl CoverageState {
    pub fn new(n: usize, block_len: usize) -> Self {
        Self {
            cumulative: vec![0.0; n],
            block: vec![0.0; n],
            sampled: Vec::new(),
            sampled_mask: vec![false; n],
            no_change_count: 0,
            steps_in_block: 0,
            block_len,
        }
    }

    pub fn is_sampled(&self, i: usize) -> bool {
        self.sampled_mask[i]
    }
}

/// Adaptive sampling distribution over eligible (unsampled) indices.
///
/// If any eligible index has zero block coverage the distribution is
/// uniform over those; otherwise weights are 1 / coverage.
pub fn sampling_distribution(block_cov: &[f64], already_sampled: &[bool]) -> Result<Vec<f64>> {
    let n = block_cov.len();
    let eligible: Vec<usize> = (0..n).filter(|&i| !already_sampled[i]).collect();
    if eligible.is_empty() {
        return Err(BalansError::SamplingExhausted { n });
    }
    let mut probs = vec![0.0; n];
    let zeros: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&i| block_cov[i] == 0.0)
        .collect();
    if !zeros.is_empty() {
        let p = 1.0 / zeros.len() as f64;
        for i in zeros {
            probs[i] = p;
        }
    } else {
        let total: f64 = eligible.iter().map(|&i| 1.0 / block_cov[i]).sum();
        for &i in &eligible {
            probs[i] = (1.0 / block_cov[i]) / total;
        }
    }
    Ok(probs)
}

/// One categorical draw from a probability vector.
pub fn draw_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding slack: fall back to the last positive-probability index.
    last_positive
}

/// A row counts as stagnant (no new coverage) when the columns it covers
/// for the first time make up at most this fraction of its support. An
/// exact-zero test never fires at scale: once the bulk of a cluster is
/// covered, each further draw still picks up a handful of fringe columns,
/// and the sampled set would grow with n instead of saturating.
const STAGNATION_FRAC: f64 = 0.25;

/// Adds a sampled row to the coverage state.
///
/// Returns the number of columns that received nonzero affinity for the
/// first time over the whole run. The stagnation counter increments when
/// that count is at most `STAGNATION_FRAC` of the row's support, and
/// resets otherwise. The block vector is zeroed after `block_len` steps
/// complete.
pub fn update_coverage(state: &mut CoverageState, index: usize, row: &SparseRow) -> Result<usize> {
    if state.sampled_mask[index] {
        return Err(BalansError::DuplicateSample { index });
    }
    let delta = row
        .iter()
        .filter(|&(c, v)| v > 0.0 && state.cumulative[c] == 0.0)
        .count();
    for (c, v) in row.iter() {
        state.cumulative[c] += v;
        state.block[c] += v;
    }
    state.sampled.push(index);
    state.sampled_mask[index] = true;
    if (delta as f64) <= STAGNATION_FRAC * row.nnz() as f64 {
        state.no_change_count += 1;
    } else {
        state.no_change_count = 0;
    }
    state.steps_in_block += 1;
    if state.steps_in_block == state.block_len {
        state.block.iter_mut().for_each(|v| *v = 0.0);
        state.steps_in_block = 0;
    }
    Ok(delta)
}

/// One machine-readable progress event per sampled row.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub step: usize,
    pub index: usize,
    pub delta: usize,
    pub nnz: usize,
}

/// Per-block RNG stream: block `b` of a run seeded with `seed` uses the
/// ChaCha8 stream `b + 1` of that seed, so any block can be reproduced
/// independently.
fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block + 1);
    rng
}

/// Runs the adaptive sampling loop until `tau` consecutive steps add no
/// first-time coverage or all indices are sampled.
pub fn run_sampling_with<S: RowSource>(
    source: &S,
    params: &HyperParams,
    mut trace: Option<&mut dyn FnMut(&TraceEvent)>,
) -> Result<(Vec<usize>, Vec<SparseRow>)> {
    let n = source.n();
    let mut state = CoverageState::new(n, params.block_len);
    let mut rows = Vec::new();
    let mut block_idx: u64 = 0;
    'outer: while state.no_change_count < params.tau && state.sampled.len() < n {
        let mut rng = block_rng(params.seed, block_idx);
        for _ in 0..params.block_len {
            if state.no_change_count >= params.tau || state.sampled.len() >= n {
                break 'outer;
            }
            let dist = sampling_distribution(&state.block, &state.sampled_mask)?;
            let idx = draw_index(&dist, &mut rng);
            let row = source.row(idx)?;
            let nnz = row.nnz();
            let delta = update_coverage(&mut state, idx, &row)?;
            rows.push(row);
            if let Some(cb) = trace.as_deref_mut() {
                cb(&TraceEvent {
                    step: state.sampled.len(),
                    index: idx,
                    delta,
                    nnz,
                });
            }
        }
        block_idx += 1;
    }
    Ok((state.sampled, rows))
}

/// Kernel-backed sampling over validated profile inputs.
pub fn run_sampling(
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    params: &HyperParams,
    trace: Option<&mut dyn FnMut(&TraceEvent)>,
) -> Result<SparseAffinityRows> {
    let source = KernelRowSource {
        profiles,
        batches,
        k: params.k,
    };
    let (indices, rows) = run_sampling_with(&source, params, trace)?;
    SparseAffinityRows::new(indices, rows, profiles.n())
}

/// Draws exactly `m` rows with the adaptive rule (no stopping criterion).
/// Used by the theory harness, where the sample budget is prescribed.
pub fn run_fixed_m<S: RowSource>(
    source: &S,
    m: usize,
    block_len: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<SparseRow>)> {
    let n = source.n();
    let mut state = CoverageState::new(n, block_len);
    let mut rows = Vec::new();
    let mut block_idx: u64 = 0;
    while state.sampled.len() < m.min(n) {
        let mut rng = block_rng(seed, block_idx);
        for _ in 0..block_len {
            if state.sampled.len() >= m.min(n) {
                break;
            }
            let dist = sampling_distribution(&state.block, &state.sampled_mask)?;
            let idx = draw_index(&dist, &mut rng);
            let row = source.row(idx)?;
            update_coverage(&mut state, idx, &row)?;
            rows.push(row);
        }
        block_idx += 1;
    }
    Ok((state.sampled, rows))
}

/// Draws rows with the adaptive rule until `stop` returns true for the
/// set of sampled indices (checked before every draw) or all indices
/// are sampled. Used with an external stopping oracle.
pub fn run_until<S: RowSource, F: FnMut(&[usize]) -> bool>(
    source: &S,
    block_len: usize,
    seed: u64,
    mut stop: F,
) -> Result<(Vec<usize>, Vec<SparseRow>)> {
    let n = source.n();
    let mut state = CoverageState::new(n, block_len);
    let mut rows = Vec::new();
    let mut block_idx: u64 = 0;
    'outer: while state.sampled.len() < n {
        let mut rng = block_rng(seed, block_idx);
        for _ in 0..block_len {
            if stop(&state.sampled) || state.sampled.len() >= n {
                break 'outer;
            }
            let dist = sampling_distribution(&state.block, &state.sampled_mask)?;
            let idx = draw_index(&dist, &mut rng);
            let row = source.row(idx)?;
            update_coverage(&mut state, idx, &row)?;
            rows.push(row);
        }
        block_idx += 1;
    }
    Ok((state.sampled, rows))
}
