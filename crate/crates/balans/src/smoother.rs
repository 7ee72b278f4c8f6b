//! Corrected profiles from sampled affinity rows.
//!
//! The default path is the pseudoinverse-free smoothing
//! X_hat = diag(1./c) A_r^T (A_r X) with row-normalized A_r, never
//! materializing the n x n propagation matrix. The exact Nystrom
//! estimator A_S^T A_{S,S}^+ A_S is kept for small m and for theory
//! verification.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::core_model::{ProfileMatrix, SparseAffinityRows, SparseRow};
use crate::error::{BalansError, Result};
use crate::numeric::pseudoinverse;

/// Default cap on m for the dense pseudoinverse path.
pub const NYSTROM_DEFAULT_CAP: usize = 2000;

/// Singular values below this fraction of sigma_max are truncated.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Row-stochastic smoothing rows plus column weights c = A_r^T 1.
#[derive(Debug, Clone)]
pub struct SmoothingOperator {
    pub row_indices: Vec<usize>,
    pub normalized_rows: Vec<SparseRow>,
    pub column_weights: Vec<f64>,
    pub n: usize,
}

impl SmoothingOperator {
    /// Columns never touched by any sampled row.
    pub fn uncovered_columns(&self) -> Vec<usize> {
        self.column_weights
            .iter()
            .enumerate()
            .filter(|&(_, &w)| w == 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Scales every stored row to unit sum and accumulates column weights.
pub fn row_normalize(rows: &SparseAffinityRows) -> Result<SmoothingOperator> {
    let n = rows.n();
    let mut column_weights = vec![0.0; n];
    let mut normalized = Vec::with_capacity(rows.m());
    for (ri, row) in rows.row_indices().iter().zip(rows.rows()) {
        let sum = row.sum();
        if sum <= 0.0 {
            return Err(BalansError::ZeroSumRow { row: *ri });
        }
        let vals: Vec<f64> = row.vals.iter().map(|v| v / sum).collect();
        for (c, v) in row.cols.iter().zip(&vals) {
            column_weights[*c] += v;
        }
        normalized.push(SparseRow {
            cols: row.cols.clone(),
            vals,
        });
    }
    Ok(SmoothingOperator {
        row_indices: rows.row_indices().to_vec(),
        normalized_rows: normalized,
        column_weights,
        n,
    })
}

/// Applies the smoothing operator: Y = A_r X, Z = A_r^T Y, then per-row
/// renormalization by the column weights. Uncovered samples pass through
/// unchanged; their count is returned.
pub fn smooth(op: &SmoothingOperator, profiles: &ProfileMatrix) -> Result<(ProfileMatrix, usize)> {
    if op.n != profiles.n() {
        return Err(BalansError::DimensionMismatch {
            what: "smoothing operator columns",
            got: op.n,
            expected: profiles.n(),
        });
    }
    let d = profiles.d();
    let x = profiles.data();

    let mut y = Array2::<f64>::zeros((op.normalized_rows.len(), d));
    for (i, row) in op.normalized_rows.iter().enumerate() {
        for (c, v) in row.iter() {
            for f in 0..d {
                y[(i, f)] += v * x[(c, f)];
            }
        }
    }

    let mut z = Array2::<f64>::zeros((op.n, d));
    for (i, row) in op.normalized_rows.iter().enumerate() {
        for (c, v) in row.iter() {
            for f in 0..d {
                z[(c, f)] += v * y[(i, f)];
            }
        }
    }

    let mut uncovered = 0;
    for j in 0..op.n {
        let w = op.column_weights[j];
        if w == 0.0 {
            uncovered += 1;
            for f in 0..d {
                z[(j, f)] = x[(j, f)];
            }
        } else {
            for f in 0..d {
                z[(j, f)] /= w;
            }
        }
    }
    Ok((ProfileMatrix::new(z)?, uncovered))
}

/// Dense rows of the sampled block: A_S as an m x n matrix plus the
/// m x m submatrix A_{S,S} read from the stored sparse entries.
fn dense_sampled(rows_idx: &[usize], rows: &[SparseRow], n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = rows_idx.len();
    let mut a_s = DMatrix::zeros(m, n);
    for (i, row) in rows.iter().enumerate() {
        for (c, v) in row.iter() {
            a_s[(i, c)] = v;
        }
    }
    let mut a_ss = DMatrix::zeros(m, m);
    for (bi, &col) in rows_idx.iter().enumerate() {
        for i in 0..m {
            a_ss[(i, bi)] = a_s[(i, col)];
        }
    }
    (a_s, a_ss)
}

/// Exact Nystrom reconstruction A_hat = A_S^T A_{S,S}^+ A_S from stored
/// sparse rows. Errors when m exceeds `cap` (pseudoinverse is O(m^3)).
pub fn nystrom_exact(rows: &SparseAffinityRows, cap: usize) -> Result<DMatrix<f64>> {
    nystrom_from_rows(rows.row_indices(), rows.rows(), rows.n(), cap)
}

/// Same estimator over raw row data; used by the theory harness where
/// entries are not confined to (0, 1].
pub fn nystrom_from_rows(
    rows_idx: &[usize],
    rows: &[SparseRow],
    n: usize,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let m = rows_idx.len();
    if m > cap {
        return Err(BalansError::NystromCapExceeded { m, cap });
    }
    let (a_s, a_ss) = dense_sampled(rows_idx, rows, n);
    let pinv = pseudoinverse(&a_ss, PINV_REL_TOL);
    Ok(a_s.transpose() * pinv * a_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows_from(pairs: Vec<(usize, Vec<(usize, f64)>)>, n: usize) -> SparseAffinityRows {
        let idx = pairs.iter().map(|(i, _)| *i).collect();
        let rows = pairs
            .into_iter()
            .map(|(_, p)| SparseRow::from_pairs(p))
            .collect();
        SparseAffinityRows::new(idx, rows, n).unwrap()
    }

    #[test]
    fn row_normalize_halves() {
        let rows = rows_from(vec![(0, vec![(0, 0.8), (3, 0.8)])], 4);
        let op = row_normalize(&rows).unwrap();
        assert_eq!(op.normalized_rows[0].vals, vec![0.5, 0.5]);
    }

    #[test]
    fn row_normalize_idempotent_on_stochastic_rows() {
        let rows = rows_from(vec![(1, vec![(0, 0.25), (1, 0.75)])], 2);
        let op = row_normalize(&rows).unwrap();
        assert_eq!(op.normalized_rows[0].vals, vec![0.25, 0.75]);
    }

    #[test]
    fn column_weights_match_dense_transpose_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 12;
        let mut pairs = Vec::new();
        for i in 0..5 {
            let p: Vec<(usize, f64)> = (0..n)
                .filter_map(|c| rng.gen_bool(0.4).then(|| (c, rng.gen_range(0.01..1.0))))
                .collect();
            let p = if p.is_empty() { vec![(i, 0.5)] } else { p };
            pairs.push((i, p));
        }
        let rows = rows_from(pairs, n);
        let op = row_normalize(&rows).unwrap();
        // Dense oracle.
        let mut dense = vec![vec![0.0; n]; rows.m()];
        for (i, row) in rows.rows().iter().enumerate() {
            let s = row.sum();
            for (c, v) in row.iter() {
                dense[i][c] = v / s;
            }
        }
        for j in 0..n {
            let want: f64 = dense.iter().map(|r| r[j]).sum();
            assert!((op.column_weights[j] - want).abs() < 1e-12);
        }
        for r in &op.normalized_rows {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_averaging() {
        let rows = rows_from(vec![(0, vec![(0, 1.0), (1, 1.0)])], 2);
        let op = row_normalize(&rows).unwrap();
        let x = ProfileMatrix::new(array![[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let (out, unc) = smooth(&op, &x).unwrap();
        assert_eq!(unc, 0);
        for i in 0..2 {
            assert!((out.data()[(i, 0)] - 1.0).abs() < 1e-12);
            assert!((out.data()[(i, 1)] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rows_identity_smoothing() {
        let n = 5;
        let pairs = (0..n).map(|i| (i, vec![(i, 1.0)])).collect();
        let rows = rows_from(pairs, n);
        let op = row_normalize(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x =
            ProfileMatrix::new(Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0)))
                .unwrap();
        let (out, _) = smooth(&op, &x).unwrap();
        for (a, b) in out.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    use ndarray::Array2;

    fn dense_smooth_oracle(op: &SmoothingOperator, x: &Array2<f64>) -> Array2<f64> {
        let m = op.normalized_rows.len();
        let n = op.n;
        let mut a_r = Array2::<f64>::zeros((m, n));
        for (i, row) in op.normalized_rows.iter().enumerate() {
            for (c, v) in row.iter() {
                a_r[(i, c)] = v;
            }
        }
        let p = a_r.t().dot(&a_r);
        let mut out = p.dot(x);
        for j in 0..n {
            let w: f64 = (0..m).map(|i| a_r[(i, j)]).sum();
            if w == 0.0 {
                for f in 0..x.ncols() {
                    out[(j, f)] = x[(j, f)];
                }
            } else {
                for f in 0..x.ncols() {
                    out[(j, f)] /= w;
                }
            }
        }
        out
    }

    #[test]
    fn smooth_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(5..50);
            let m = rng.gen_range(1..n);
            let mut pairs = Vec::new();
            for i in 0..m {
                let mut p: Vec<(usize, f64)> = (0..n)
                    .filter_map(|c| rng.gen_bool(0.3).then(|| (c, rng.gen_range(0.01..1.0))))
                    .collect();
                if p.is_empty() {
                    p.push((i, 0.7));
                }
                pairs.push((i, p));
            }
            let rows = rows_from(pairs, n);
            let op = row_normalize(&rows).unwrap();
            let x = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-2.0..2.0));
            let profiles = ProfileMatrix::new(x.clone()).unwrap();
            let (out, _) = smooth(&op, &profiles).unwrap();
            let want = dense_smooth_oracle(&op, &x);
            for (a, b) in out.data().iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn smoothing_preserves_constants_and_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 20;
        let mut pairs = Vec::new();
        for i in 0..6 {
            let p: Vec<(usize, f64)> = (0..n)
                .filter_map(|c| rng.gen_bool(0.5).then(|| (c, rng.gen_range(0.01..1.0))))
                .collect();
            let p = if p.is_empty() { vec![(i, 1.0)] } else { p };
            pairs.push((i, p));
        }
        let rows = rows_from(pairs, n);
        let op = row_normalize(&rows).unwrap();
        // Constant profiles stay put.
        let x = ProfileMatrix::new(Array2::from_elem((n, 2), 3.25)).unwrap();
        let (out, _) = smooth(&op, &x).unwrap();
        for v in out.data().iter() {
            assert!((v - 3.25).abs() < 1e-12);
        }
        // Convex-combination bound per feature.
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-5.0..5.0));
        let profiles = ProfileMatrix::new(x.clone()).unwrap();
        let (out, _) = smooth(&op, &profiles).unwrap();
        let uncovered: std::collections::HashSet<usize> =
            op.uncovered_columns().into_iter().collect();
        for f in 0..3 {
            let lo = x.column(f).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.column(f).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for j in 0..n {
                if uncovered.contains(&j) {
                    continue;
                }
                let v = out.data()[(j, f)];
                assert!(v >= lo - 1e-10 && v <= hi + 1e-10);
            }
        }
    }

    #[test]
    fn uncovered_rows_pass_through() {
        let rows = rows_from(vec![(0, vec![(0, 1.0), (1, 1.0)])], 3);
        let op = row_normalize(&rows).unwrap();
        let x = ProfileMatrix::new(array![[1.0], [3.0], [7.0]]).unwrap();
        let (out, unc) = smooth(&op, &x).unwrap();
        assert_eq!(unc, 1);
        assert_eq!(out.data()[(2, 0)], 7.0);
    }

    #[test]
    fn nystrom_reconstructs_two_block_matrix() {
        // A0 = diag(1 * ones(2x2), 2 * ones(2x2)), sample rows {0, 2}.
        let rows = rows_from(
            vec![
                (0, vec![(0, 1.0), (1, 1.0)]),
                (2, vec![(2, 1.0), (3, 1.0)]),
            ],
            4,
        );
        // Values 2.0 exceed (0,1], so go through the raw-row variant.
        let raw = vec![
            SparseRow::from_pairs(vec![(0, 1.0), (1, 1.0)]),
            SparseRow::from_pairs(vec![(2, 2.0), (3, 2.0)]),
        ];
        let a_hat = nystrom_from_rows(&[0, 2], &raw, 4, 100).unwrap();
        let want = [
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 2.0],
            [0.0, 0.0, 2.0, 2.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((a_hat[(i, j)] - want[i][j]).abs() < 1e-10);
            }
        }
        let _ = rows;
    }

    #[test]
    fn nystrom_single_cluster_all_ones() {
        let n = 5;
        let raw = vec![SparseRow::from_pairs((0..n).map(|j| (j, 1.0)).collect())];
        let a_hat = nystrom_from_rows(&[2], &raw, n, 100).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((a_hat[(i, j)] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nystrom_cap_enforced() {
        let raw = vec![
            SparseRow::from_pairs(vec![(0, 1.0)]),
            SparseRow::from_pairs(vec![(1, 1.0)]),
        ];
        let err = nystrom_from_rows(&[0, 1], &raw, 2, 1).unwrap_err();
        assert!(matches!(err, BalansError::NystromCapExceeded { m: 2, cap: 1 }));
    }

    #[test]
    fn nystrom_symmetric_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 20;
        // Symmetric noisy two-block matrix.
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let base = if (i < 10) == (j < 10) { 1.0 } else { 0.0 };
                let v = base + rng.gen_range(0.0..0.05);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let idx = [0usize, 3, 11, 15];
        let rows: Vec<SparseRow> = idx
            .iter()
            .map(|&i| {
                SparseRow::from_pairs((0..n).map(|j| (j, a[(i, j)])).collect())
            })
            .collect();
        let a_hat = nystrom_from_rows(&idx, &rows, n, 100).unwrap();
        let asym = (&a_hat - a_hat.transpose()).abs().max();
        assert!(asym < 1e-8, "asymmetry {asym}");
    }

    #[test]
    fn zero_sum_row_rejected() {
        // SparseAffinityRows cannot hold zeros, so build the operator from
        // a row whose values are all dropped.
        let row = SparseRow::from_pairs(vec![(0, 0.0)]);
        assert_eq!(row.nnz(), 0);
        let rows = SparseAffinityRows::new(vec![0], vec![row], 2).unwrap();
        assert!(matches!(
            row_normalize(&rows),
            Err(BalansError::ZeroSumRow { row: 0 })
        ));
    }
}
