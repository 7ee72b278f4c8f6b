//! Batch-dependent local-scale affinity rows.
//!
//! For an anchor point, each batch gets its own squared bandwidth: the
//! squared distance to the anchor's k-th nearest neighbor within that
//! batch. Affinities are exp(-d^2 / sigma^2) with the bandwidth chosen
//! by the neighbor's batch, then sparsified by elbow detection on the
//! descending-sorted row.
//!
//! All operations are pure; distinct rows can be computed in parallel.

use crate::core_model::{BatchLabels, ProfileMatrix, SparseRow};
use crate::error::{BalansError, Result};

/// Per-batch squared local scales for one anchor point.
#[derive(Debug, Clone)]
pub struct LocalScaleTable {
    pub anchor: usize,
    /// Squared scale per batch id.
    pub scales: Vec<f64>,
}

/// Squared Euclidean distances from `anchor` to every point.
pub fn distance_row(profiles: &ProfileMatrix, anchor: usize) -> Vec<f64> {
    let x = profiles.row(anchor);
    (0..profiles.n())
        .map(|j| {
            let y = profiles.row(j);
            x.iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect()
}

/// k-th smallest within-batch squared distance from the anchor, per batch.
///
/// The anchor is excluded from its own batch's candidate set. A batch with
/// fewer than k candidates falls back to its farthest available neighbor;
/// a zero k-th distance (exact duplicates) falls back to the smallest
/// nonzero within-batch distance.
pub fn batch_local_scales(
    dist_row: &[f64],
    batches: &BatchLabels,
    anchor: usize,
    k: usize,
) -> Result<LocalScaleTable> {
    assert!(k >= 1, "k must be >= 1");
    let b_count = batches.count();
    let mut per_batch: Vec<Vec<f64>> = vec![Vec::new(); b_count];
    for (j, &d) in dist_row.iter().enumerate() {
        if j == anchor {
            continue;
        }
        per_batch[batches.get(j)].push(d);
    }
    let mut scales = Vec::with_capacity(b_count);
    for (b, cand) in per_batch.iter_mut().enumerate() {
        if cand.is_empty() {
            return Err(BalansError::NoBatchCandidates { anchor, batch: b });
        }
        let idx = (k - 1).min(cand.len() - 1);
        let (_, &mut mut scale, _) =
            cand.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).unwrap());
        if scale == 0.0 {
            let smallest_nonzero = cand
                .iter()
                .copied()
                .filter(|&d| d > 0.0)
                .fold(f64::INFINITY, f64::min);
            if smallest_nonzero.is_finite() {
                scale = smallest_nonzero;
            } else {
                return Err(BalansError::ZeroScale { anchor, batch: b });
            }
        }
        scales.push(scale);
    }
    Ok(LocalScaleTable { anchor, scales })
}

/// Dense affinity row: entry j = exp(-d^2_ij / sigma^2_{i, b_j}).
pub fn affinity_row(
    dist_row: &[f64],
    scales: &LocalScaleTable,
    batches: &BatchLabels,
) -> Result<Vec<f64>> {
    dist_row
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            let s = scales.scales[batches.get(j)];
            if s <= 0.0 {
                if d == 0.0 {
                    return Ok(1.0);
                }
                return Err(BalansError::ZeroScale {
                    anchor: scales.anchor,
                    batch: batches.get(j),
                });
            }
            Ok((-d / s).exp())
        })
        .collect()
}

/// Two-segment variance-drop statistic for every cut of a
/// descending-sorted row.
///
/// At cut c the drop is the sum-of-squares reduction of splitting the
/// whole row there: SSE(row) - SSE(row[..c]) - SSE(row[c..]), i.e. the
/// between-segment sum of squares. drops[c - 1] belongs to cut c.
/// Order-preserving integer encoding of an f64: the encoded u64s compare
/// like `f64::total_cmp`. Lets the hot sort run on plain integers.
#[inline]
fn total_order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    bits ^ ((((bits as i64) >> 63) as u64) | 0x8000_0000_0000_0000)
}

#[inline]
fn from_total_order_key(key: u64) -> f64 {
    let bits = if key & 0x8000_0000_0000_0000 != 0 {
        key ^ 0x8000_0000_0000_0000
    } else {
        !key
    };
    f64::from_bits(bits)
}

fn elbow_drops(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    let mut total_s = 0.0;
    let mut total_sq = 0.0;
    for &v in sorted {
        total_s += v;
        total_sq += v * v;
    }
    let sse = |s: f64, sq: f64, len: usize| -> f64 {
        (sq - s * s / len as f64).max(0.0)
    };
    let total = sse(total_s, total_sq, n);
    let mut left_s = 0.0;
    let mut left_sq = 0.0;
    (1..n)
        .map(|c| {
            left_s += sorted[c - 1];
            left_sq += sorted[c - 1] * sorted[c - 1];
            total - sse(left_s, left_sq, c) - sse(total_s - left_s, total_sq - left_sq, n - c)
        })
        .collect()
}

/// Truncates a dense row at the strongest two-segment change point.
///
/// Among all cuts of the descending-sorted row, the one with the largest
/// between-segment variance drop is chosen (earliest cut on ties),
/// provided the drop is strictly positive and at least the 80th
/// percentile (nearest rank) of all observed drops. Rows with no
/// qualifying drop are kept whole; retained values are unchanged.
/// The drop must be maximized globally rather than taken at the first
/// threshold exceedance: on smoothly decaying rows the steepest local
/// slope sits at the head, and cutting there strands every row at a
/// handful of entries.
pub fn elbow_sparsify(row: &[f64]) -> SparseRow {
    let n = row.len();
    assert!(n >= 2, "elbow_sparsify needs at least 2 entries");
    let mut keys: Vec<u64> = row.iter().map(|&v| total_order_key(v)).collect();
    keys.sort_unstable();
    let sorted: Vec<f64> = keys.iter().rev().map(|&k| from_total_order_key(k)).collect();
    let mut drops = elbow_drops(&sorted);

    let best = drops
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(c, &d)| (c, d));
    let rank = ((0.8 * drops.len() as f64).ceil() as usize).max(1);
    let (_, &mut threshold, _) = drops.select_nth_unstable_by(rank - 1, f64::total_cmp);

    let cut = match best {
        Some((c, d)) if d > 0.0 && d >= threshold => c + 1,
        _ => n,
    };

    // Retained support: the cut largest entries, ties broken toward lower
    // index. (value desc, index asc) is a total order, so the O(n)
    // selection is deterministic and matches a full sort.
    let mut pairs: Vec<(f64, usize)> = row.iter().copied().zip(0..n).collect();
    if cut < n {
        pairs.select_nth_unstable_by(cut - 1, |a, b| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        });
        pairs.truncate(cut);
    }
    SparseRow::from_pairs(pairs.into_iter().map(|(v, i)| (i, v)).collect())
}

/// Full sparse affinity row for one anchor: distances, per-batch scales,
/// kernel, elbow sparsification.
pub fn compute_sparse_row(
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    anchor: usize,
    k: usize,
) -> Result<SparseRow> {
    let dist = distance_row(profiles, anchor);
    if profiles.n() == 1 {
        return Ok(SparseRow::from_pairs(vec![(anchor, 1.0)]));
    }
    let scales = batch_local_scales(&dist, batches, anchor, k)?;
    let dense = affinity_row(&dist, &scales, batches)?;
    Ok(elbow_sparsify(&dense))
}
