//! Shared data types for profiles, labels, sparse affinity rows and
//! hyperparameters, plus input validation.
//!
//! All types here are immutable after construction and safe to share
//! read-only across threads.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{BalansError, Result};

/// An n x d matrix of per-sample feature profiles. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatrix {
    data: Array2<f64>,
}

impl ProfileMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(BalansError::EmptyMatrix { n, d });
        }
        for ((row, col), &v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(BalansError::NonFinite { row, col });
            }
        }
        Ok(Self { data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.row(i)
    }
}

/// Dense 0-based label vector with ids in 0..count, every id occurring
/// at least once. Used for both batch and cluster labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseLabels {
    labels: Vec<usize>,
    count: usize,
}

impl DenseLabels {
    pub fn new(labels: Vec<usize>, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(BalansError::InvalidInput("label count must be >= 1".into()));
        }
        let mut seen = vec![false; count];
        for &l in &labels {
            if l >= count {
                return Err(BalansError::LabelOutOfRange {
                    id: l + 1,
                    max: count,
                });
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(BalansError::EmptyBatch {
                id: missing + 1,
                total: count,
            });
        }
        Ok(Self { labels, count })
    }

    /// Maps arbitrary raw labels to dense ids in first-appearance order.
    pub fn from_raw<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for r in raw {
            let next = map.len();
            let id = *map.entry(r.clone()).or_insert(next);
            labels.push(id);
        }
        Self {
            labels,
            count: map.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices per label id.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

pub type BatchLabels = DenseLabels;
pub type ClusterLabels = DenseLabels;

/// One sparse affinity row: strictly increasing column indices with
/// values in (0, 1]. Exact zeros are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseRow {
    /// Builds a canonical row from (col, val) pairs, sorting columns and
    /// dropping exact zeros.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.retain(|&(_, v)| v != 0.0);
        pairs.sort_by_key(|&(c, _)| c);
        let cols = pairs.iter().map(|&(c, _)| c).collect();
        let vals = pairs.iter().map(|&(_, v)| v).collect();
        Self { cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols.iter().copied().zip(self.vals.iter().copied())
    }
}

/// The sampled rows A_S of the n x n affinity matrix, row-compressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAffinityRows {
    row_indices: Vec<usize>,
    rows: Vec<SparseRow>,
    n: usize,
}

impl SparseAffinityRows {
    pub fn new(row_indices: Vec<usize>, rows: Vec<SparseRow>, n: usize) -> Result<Self> {
        if row_indices.len() != rows.len() {
            return Err(BalansError::DimensionMismatch {
                what: "rows",
                got: rows.len(),
                expected: row_indices.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for &i in &row_indices {
            if i >= n {
                return Err(BalansError::InvalidInput(format!(
                    "row index {i} out of range for n = {n}"
                )));
            }
            if !seen.insert(i) {
                return Err(BalansError::DuplicateSample { index: i });
            }
        }
        for (ri, row) in row_indices.iter().zip(&rows) {
            let mut prev: Option<usize> = None;
            for (c, v) in row.iter() {
                if c >= n {
                    return Err(BalansError::InvalidInput(format!(
                        "column {c} out of range in row {ri}"
                    )));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(BalansError::InvalidInput(format!(
                            "columns not strictly increasing in row {ri}"
                        )));
                    }
                }
                if !(v > 0.0 && v <= 1.0) {
                    return Err(BalansError::InvalidInput(format!(
                        "affinity {v} at ({ri}, {c}) outside (0, 1]"
                    )));
                }
                prev = Some(c);
            }
        }
        Ok(Self {
            row_indices,
            rows,
            n,
        })
    }

    pub fn m(&self) -> usize {
        self.row_indices.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_indices
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }
}

/// Pipeline hyperparameters. Defaults: k = 5, tau = 50, block_len = 50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Neighbor rank for the per-batch local scale.
    pub k: usize,
    /// Stop after this many consecutive steps with no new coverage.
    pub tau: usize,
    /// Adaptive-sampling block length J.
    pub block_len: usize,
    /// Optional retained PCA dimension.
    pub pca_dims: Option<usize>,
    /// RNG seed.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k: 5,
            tau: 50,
            block_len: 50,
            pca_dims: None,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k < 1 {
            return Err(BalansError::InvalidHyperParam("k must be >= 1".into()));
        }
        if self.tau < 1 {
            return Err(BalansError::InvalidHyperParam("tau must be >= 1".into()));
        }
        if self.block_len < 1 {
            return Err(BalansError::InvalidHyperParam(
                "block_len must be >= 1".into(),
            ));
        }
        if let Some(p) = self.pca_dims {
            if p < 1 || p > d {
                return Err(BalansError::InvalidHyperParam(format!(
                    "pca_dims = {p} not in [1, {d}]"
                )));
            }
        }
        Ok(())
    }
}

/// Validated (profiles, batches, params) bundle.
#[derive(Debug)]
pub struct ValidatedInputs<'a> {
    pub profiles: &'a ProfileMatrix,
    pub batches: &'a BatchLabels,
    pub params: &'a HyperParams,
}

/// Checks cross-type invariants and returns the bundle unchanged.
pub fn validate_inputs<'a>(
    profiles: &'a ProfileMatrix,
    batches: &'a BatchLabels,
    params: &'a HyperParams,
) -> Result<ValidatedInputs<'a>> {
    if batches.len() != profiles.n() {
        return Err(BalansError::DimensionMismatch {
            what: "batch labels",
            got: batches.len(),
            expected: profiles.n(),
        });
    }
    params.validate(profiles.d())?;
    Ok(ValidatedInputs {
        profiles,
        batches,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn four_by_two() -> ProfileMatrix {
        ProfileMatrix::new(array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]]).unwrap()
    }

    #[test]
    fn validate_ok() {
        let p = four_by_two();
        let b = BatchLabels::new(vec![0, 0, 1, 1], 2).unwrap();
        let params = HyperParams {
            k: 1,
            ..Default::default()
        };
        assert!(validate_inputs(&p, &b, &params).is_ok());
    }

    #[test]
    fn validate_length_mismatch() {
        let p = four_by_two();
        let b = BatchLabels::new(vec![0, 0, 1], 2).unwrap();
        let err = validate_inputs(&p, &b, &HyperParams::default()).unwrap_err();
        assert!(matches!(
            err,
            BalansError::DimensionMismatch { got: 3, expected: 4, .. }
        ));
    }

    #[test]
    fn nan_reports_position() {
        let err = ProfileMatrix::new(array![[0.0, 1.0], [1.0, 2.0], [3.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, BalansError::NonFinite { row: 2, col: 1 }));
    }

    #[test]
    fn missing_batch_id_rejected() {
        let err = BatchLabels::new(vec![0, 0, 2, 2], 3).unwrap_err();
        assert!(matches!(err, BalansError::EmptyBatch { id: 2, .. }));
    }

    #[test]
    fn raw_labels_first_appearance_order() {
        let l = DenseLabels::from_raw(&["b", "a", "b", "c"]);
        assert_eq!(l.labels(), &[0, 1, 0, 2]);
        assert_eq!(l.count(), 3);
    }

    #[test]
    fn sparse_row_canonicalization_idempotent() {
        let r = SparseRow::from_pairs(vec![(3, 0.5), (1, 0.2), (2, 0.0)]);
        assert_eq!(r.cols, vec![1, 3]);
        let again = SparseRow::from_pairs(r.iter().collect());
        assert_eq!(r, again);
    }

    #[test]
    fn sparse_rows_reject_out_of_range_affinity() {
        let row = SparseRow {
            cols: vec![0],
            vals: vec![1.5],
        };
        assert!(SparseAffinityRows::new(vec![0], vec![row], 2).is_err());
    }

    #[test]
    fn hyperparams_reject_bad_pca() {
        let hp = HyperParams {
            pca_dims: Some(9),
            ..Default::default()
        };
        assert!(hp.validate(4).is_err());
    }
}
