//! Evaluation suite: silhouette (batch/label), LISI (batch/label), kBET
//! acceptance, graph connectivity, ARI, NMI and a seeded k-means
//! clusterer. All reported scores are normalized to [0, 1] with higher
//! meaning better.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core_model::{BatchLabels, ClusterLabels, DenseLabels, ProfileMatrix};
use crate::error::{BalansError, Result};
use crate::numeric::chi_square_sf;

/// Euclidean distance matrix.
fn distance_matrix(profiles: &ProfileMatrix) -> Array2<f64> {
    let n = profiles.n();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = profiles
                .row(i)
                .iter()
                .zip(profiles.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Indices of the `k` nearest neighbors of each point, self excluded,
/// ties broken by index.
fn knn(dist: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = dist.nrows();
    (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dist[(i, a)].partial_cmp(&dist[(i, b)]).unwrap().then(a.cmp(&b)));
            order.truncate(k);
            order
        })
        .collect()
}

/// Mean silhouette width over all points. Points in singleton labels
/// contribute s(i) = 0.
pub fn silhouette(profiles: &ProfileMatrix, labels: &DenseLabels) -> Result<f64> {
    if labels.count() < 2 {
        return Err(BalansError::SingleLabel { got: labels.count() });
    }
    let n = profiles.n();
    let dist = distance_matrix(profiles);
    let groups = labels.groups();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels.get(i);
        if groups[own].len() == 1 {
            continue; // s(i) = 0
        }
        let a = groups[own]
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| dist[(i, j)])
            .sum::<f64>()
            / (groups[own].len() - 1) as f64;
        let b = groups
            .iter()
            .enumerate()
            .filter(|&(l, g)| l != own && !g.is_empty())
            .map(|(_, g)| g.iter().map(|&j| dist[(i, j)]).sum::<f64>() / g.len() as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

/// Normalized label silhouette: (s + 1) / 2, higher = better separation.
pub fn silhouette_label_score(profiles: &ProfileMatrix, labels: &DenseLabels) -> Result<f64> {
    Ok((silhouette(profiles, labels)? + 1.0) / 2.0)
}

/// Normalized batch silhouette: 1 - (s + 1) / 2, higher = better mixing.
pub fn silhouette_batch_score(profiles: &ProfileMatrix, batches: &BatchLabels) -> Result<f64> {
    Ok(1.0 - (silhouette(profiles, batches)? + 1.0) / 2.0)
}

/// Mean local inverse Simpson index over `neighborhood` nearest
/// neighbors (self excluded). Raw value lies in [1, label count].
pub fn lisi(profiles: &ProfileMatrix, labels: &DenseLabels, neighborhood: usize) -> Result<f64> {
    let n = profiles.n();
    if neighborhood < 1 || neighborhood >= n {
        return Err(BalansError::BadNeighborhood {
            got: neighborhood,
            n,
        });
    }
    let dist = distance_matrix(profiles);
    let neigh = knn(&dist, neighborhood);
    let mut total = 0.0;
    for nb in &neigh {
        let mut counts = vec![0usize; labels.count()];
        for &j in nb {
            counts[labels.get(j)] += 1;
        }
        let simpson: f64 = counts
            .iter()
            .map(|&c| {
                let p = c as f64 / nb.len() as f64;
                p * p
            })
            .sum();
        total += 1.0 / simpson;
    }
    Ok(total / n as f64)
}

/// Normalized batch LISI: (LISI - 1) / (B - 1).
pub fn lisi_batch_score(
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    neighborhood: usize,
) -> Result<f64> {
    let b = batches.count();
    if b < 2 {
        return Err(BalansError::SingleLabel { got: b });
    }
    Ok((lisi(profiles, batches, neighborhood)? - 1.0) / (b - 1) as f64)
}

/// Normalized label LISI: 1 - (LISI - 1) / (L - 1).
pub fn lisi_label_score(
    profiles: &ProfileMatrix,
    labels: &DenseLabels,
    neighborhood: usize,
) -> Result<f64> {
    let l = labels.count();
    if l < 2 {
        return Err(BalansError::SingleLabel { got: l });
    }
    Ok(1.0 - (lisi(profiles, labels, neighborhood)? - 1.0) / (l - 1) as f64)
}

/// kBET acceptance rate: fraction of points whose neighborhood batch
/// composition passes a Pearson chi-square test against the global batch
/// proportions at significance `alpha` (B - 1 degrees of freedom).
pub fn kbet(
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    neighborhood: usize,
    alpha: f64,
) -> Result<f64> {
    let n = profiles.n();
    let b = batches.count();
    if b < 2 {
        return Err(BalansError::SingleLabel { got: b });
    }
    if neighborhood < b || neighborhood >= n {
        return Err(BalansError::BadNeighborhood {
            got: neighborhood,
            n,
        });
    }
    let mut global = vec![0usize; b];
    for &l in batches.labels() {
        global[l] += 1;
    }
    let dist = distance_matrix(profiles);
    let neigh = knn(&dist, neighborhood);
    let mut accepted = 0usize;
    for nb in &neigh {
        let mut counts = vec![0usize; b];
        for &j in nb {
            counts[batches.get(j)] += 1;
        }
        let chi2: f64 = (0..b)
            .map(|x| {
                let expected = nb.len() as f64 * global[x] as f64 / n as f64;
                let diff = counts[x] as f64 - expected;
                diff * diff / expected
            })
            .sum();
        if chi_square_sf(chi2, b - 1) >= alpha {
            accepted += 1;
        }
    }
    Ok(accepted as f64 / n as f64)
}

/// Graph connectivity over the symmetrized kNN adjacency with self
/// loops: Conn(c) = (1/|I_c|^2) sum_{i,j in I_c} G_ij, averaged over
/// labels.
pub fn graph_connectivity(
    profiles: &ProfileMatrix,
    labels: &DenseLabels,
    neighborhood: usize,
) -> Result<f64> {
    let n = profiles.n();
    if neighborhood < 1 {
        return Err(BalansError::BadNeighborhood {
            got: neighborhood,
            n,
        });
    }
    let dist = distance_matrix(profiles);
    let neigh = knn(&dist, neighborhood.min(n - 1));
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
        for &j in &neigh[i] {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let groups = labels.groups();
    let mut total = 0.0;
    for g in &groups {
        let mut edges = 0usize;
        for &i in g {
            for &j in g {
                if adj[i][j] {
                    edges += 1;
                }
            }
        }
        total += edges as f64 / (g.len() * g.len()) as f64;
    }
    Ok(total / groups.len() as f64)
}

fn comb2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

fn contingency(a: &[usize], b: &[usize], ka: usize, kb: usize) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    table
}

/// Adjusted Rand index between two partitions.
pub fn ari(a: &DenseLabels, b: &DenseLabels) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BalansError::DimensionMismatch {
            what: "second partition",
            got: b.len(),
            expected: a.len(),
        });
    }
    let table = contingency(a.labels(), b.labels(), a.count(), b.count());
    let n = a.len();
    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: f64 = table.iter().map(|row| comb2(row.iter().sum())).sum();
    let sum_b: f64 = (0..b.count())
        .map(|j| comb2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let expected = sum_a * sum_b / comb2(n);
    let max_index = (sum_a + sum_b) / 2.0;
    if (max_index - expected).abs() < 1e-12 {
        // Both partitions degenerate in the same way.
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Normalized mutual information 2 I(a;b) / (H(a) + H(b)). Two constant
/// partitions are identical, so the value is defined as 1.
pub fn nmi(a: &DenseLabels, b: &DenseLabels) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BalansError::DimensionMismatch {
            what: "second partition",
            got: b.len(),
            expected: a.len(),
        });
    }
    let n = a.len() as f64;
    let table = contingency(a.labels(), b.labels(), a.count(), b.count());
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col_sums: Vec<f64> = (0..b.count())
        .map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let h = |sums: &[f64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let p = s / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = h(&row_sums);
    let hb = h(&col_sums);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij * n * n / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Seeded k-means with farthest-point initialization. Deterministic per
/// seed; the objective is non-increasing across Lloyd iterations.
pub fn kmeans_cluster(profiles: &ProfileMatrix, k: usize, seed: u64) -> Result<ClusterLabels> {
    let n = profiles.n();
    let d = profiles.d();
    if k < 1 {
        return Err(BalansError::InvalidHyperParam("kmeans K must be >= 1".into()));
    }
    if k > n {
        return Err(BalansError::InvalidHyperParam(format!(
            "kmeans K = {k} exceeds n = {n}"
        )));
    }
    let x = profiles.data();
    let point_dist_sq = |i: usize, c: &[f64]| -> f64 {
        (0..d).map(|f| (x[(i, f)] - c[f]) * (x[(i, f)] - c[f])).sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut centers: Vec<Vec<f64>> = vec![x.row(first).to_vec()];
    while centers.len() < k {
        let far = (0..n)
            .map(|i| {
                let dmin = centers
                    .iter()
                    .map(|c| point_dist_sq(i, c))
                    .fold(f64::INFINITY, f64::min);
                (i, dmin)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        centers.push(x.row(far).to_vec());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..200 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| {
                    point_dist_sq(i, &centers[a])
                        .partial_cmp(&point_dist_sq(i, &centers[b]))
                        .unwrap()
                        .then(a.cmp(&b))
                })
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for f in 0..d {
                sums[assign[i]][f] += x[(i, f)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster with the point farthest from
                // its current center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        point_dist_sq(a, &centers[assign[a]])
                            .partial_cmp(&point_dist_sq(b, &centers[assign[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = x.row(far).to_vec();
                changed = true;
            } else {
                for f in 0..d {
                    centers[c][f] = sums[c][f] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // Compact ids so every id occurs.
    Ok(ClusterLabels::from_raw(&assign))
}

/// Configuration of the metric suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub neighborhood: usize,
    pub alpha: f64,
    pub kmeans_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            neighborhood: 30,
            alpha: 0.05,
            kmeans_seed: 0,
        }
    }
}

/// Normalized [0, 1] scores plus group averages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub connectivity: f64,
    pub kbet: f64,
    pub lisi_batch: f64,
    pub silhouette_batch: f64,
    pub lisi_label: f64,
    pub ari: f64,
    pub nmi: f64,
    pub silhouette_label: f64,
    pub avg_batch: f64,
    pub avg_label: f64,
    pub avg_all: f64,
}

impl MetricReport {
    pub fn scores(&self) -> [f64; 8] {
        [
            self.connectivity,
            self.kbet,
            self.lisi_batch,
            self.silhouette_batch,
            self.lisi_label,
            self.ari,
            self.nmi,
            self.silhouette_label,
        ]
    }
}

/// Runs the batch-metric group {connectivity, kBET, LISI-batch,
/// silhouette-batch} and label group {LISI-label, ARI, NMI,
/// silhouette-label}. ARI and NMI compare seeded k-means (K = label
/// count) against the ground-truth labels.
pub fn evaluate(
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    labels: &ClusterLabels,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let n = profiles.n();
    let nb = config.neighborhood.min(n.saturating_sub(1)).max(1);
    let connectivity = graph_connectivity(profiles, labels, nb)?;
    let kbet_score = kbet(profiles, batches, nb.max(batches.count()), config.alpha)?;
    let lisi_b = lisi_batch_score(profiles, batches, nb)?;
    let silh_b = silhouette_batch_score(profiles, batches)?;
    let lisi_l = lisi_label_score(profiles, labels, nb)?;
    let clusters = kmeans_cluster(profiles, labels.count(), config.kmeans_seed)?;
    let ari_score = ari(&clusters, labels)?.clamp(0.0, 1.0);
    let nmi_score = nmi(&clusters, labels)?;
    let silh_l = silhouette_label_score(profiles, labels)?;
    let avg_batch = (connectivity + kbet_score + lisi_b + silh_b) / 4.0;
    let avg_label = (lisi_l + ari_score + nmi_score + silh_l) / 4.0;
    Ok(MetricReport {
        connectivity,
        kbet: kbet_score,
        lisi_batch: lisi_b,
        silhouette_batch: silh_b,
        lisi_label: lisi_l,
        ari: ari_score,
        nmi: nmi_score,
        silhouette_label: silh_l,
        avg_batch,
        avg_label,
        avg_all: (avg_batch + avg_label) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn profiles_from(rows: Vec<Vec<f64>>) -> ProfileMatrix {
        let n = rows.len();
        let d = rows[0].len();
        ProfileMatrix::new(
            Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn silhouette_far_clusters_near_one() {
        let p = profiles_from(vec![
            vec![0.0],
            vec![0.1],
            vec![100.0],
            vec![100.1],
        ]);
        let l = DenseLabels::new(vec![0, 0, 1, 1], 2).unwrap();
        let s = silhouette(&p, &l).unwrap();
        assert!(s > 0.99, "s = {s}");
        assert!(silhouette_label_score(&p, &l).unwrap() > 0.995);
    }

    #[test]
    fn silhouette_single_label_errors() {
        let p = profiles_from(vec![vec![0.0], vec![1.0]]);
        let l = DenseLabels::new(vec![0, 0], 1).unwrap();
        assert!(silhouette(&p, &l).is_err());
    }

    #[test]
    fn lisi_pure_neighborhood_is_one() {
        let p = profiles_from(vec![
            vec![0.0],
            vec![0.1],
            vec![0.2],
            vec![50.0],
            vec![50.1],
            vec![50.2],
        ]);
        let l = DenseLabels::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let v = lisi(&p, &l, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lisi_well_mixed_labels_near_label_count() {
        // Labels assigned independently of position: every neighborhood
        // is a near-even mix, so LISI approaches the label count.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = profiles_from((0..200).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect());
        let l = DenseLabels::new((0..200).map(|i| i % 2).collect(), 2).unwrap();
        let v = lisi(&p, &l, 20).unwrap();
        assert!(v > 1.8 && v <= 2.0, "v = {v}");
    }

    #[test]
    fn kbet_perfect_mixing_accepts() {
        // Neighborhood composition equals global proportions everywhere.
        let mut rows = Vec::new();
        let mut batch = Vec::new();
        for i in 0..20 {
            rows.push(vec![(i % 10) as f64 * 0.001]);
            batch.push(i % 2);
        }
        let p = profiles_from(rows);
        let b = DenseLabels::new(batch, 2).unwrap();
        let acc = kbet(&p, &b, 10, 0.05).unwrap();
        assert!(acc > 0.9, "acceptance = {acc}");
    }

    #[test]
    fn kbet_segregated_batches_reject() {
        let mut rows = Vec::new();
        let mut batch = Vec::new();
        for i in 0..40 {
            let base = if i < 20 { 0.0 } else { 1000.0 };
            rows.push(vec![base + i as f64 * 0.01]);
            batch.push(usize::from(i >= 20));
        }
        let p = profiles_from(rows);
        let b = DenseLabels::new(batch, 2).unwrap();
        let acc = kbet(&p, &b, 15, 0.05).unwrap();
        assert!(acc < 0.1, "acceptance = {acc}");
    }

    #[test]
    fn connectivity_cliques_score_one() {
        let p = profiles_from(vec![
            vec![0.0],
            vec![0.1],
            vec![0.2],
            vec![90.0],
            vec![90.1],
        ]);
        let l = DenseLabels::new(vec![0, 0, 0, 1, 1], 2).unwrap();
        let gc = graph_connectivity(&p, &l, 2).unwrap();
        assert!((gc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn connectivity_no_within_label_edges_diagonal_only() {
        // Labels interleave along the line so each point's single nearest
        // neighbor is the other label; with neighborhood so small that no
        // same-label pair connects, Conn(c) = 1/|I_c|.
        let p = profiles_from(vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]]);
        let l = DenseLabels::new(vec![0, 1, 0, 1], 2).unwrap();
        let gc = graph_connectivity(&p, &l, 1).unwrap();
        assert!((gc - 0.5).abs() < 1e-12); // each label: 2/4 = 1/2
    }

    #[test]
    fn ari_identical_is_one() {
        let a = DenseLabels::new(vec![0, 0, 1, 1, 2], 3).unwrap();
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ari_allsame_vs_alldistinct_is_zero() {
        let a = DenseLabels::new(vec![0; 5], 1).unwrap();
        let b = DenseLabels::new(vec![0, 1, 2, 3, 4], 5).unwrap();
        assert_eq!(ari(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn ari_nmi_invariant_under_relabeling() {
        let a = DenseLabels::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let b = DenseLabels::new(vec![2, 2, 0, 0, 1, 1], 3).unwrap();
        assert!((ari(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmi(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_constant_partitions_is_one() {
        let a = DenseLabels::new(vec![0; 4], 1).unwrap();
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn nmi_independent_labels_near_zero() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let a = DenseLabels::from_raw(&(0..n).map(|_| rng.gen_range(0..4usize)).collect::<Vec<_>>());
        let b = DenseLabels::from_raw(&(0..n).map(|_| rng.gen_range(0..4usize)).collect::<Vec<_>>());
        let v = nmi(&a, &b).unwrap();
        assert!(v < 0.02, "nmi = {v}");
    }

    #[test]
    fn kmeans_recovers_blobs() {
        for seed in 0..20u64 {
            let mut rows = Vec::new();
            let mut truth = Vec::new();
            for c in 0..3 {
                for i in 0..10 {
                    rows.push(vec![c as f64 * 100.0 + (i as f64) * 0.1, c as f64 * -50.0]);
                    truth.push(c);
                }
            }
            let p = profiles_from(rows);
            let labels = kmeans_cluster(&p, 3, seed).unwrap();
            let t = DenseLabels::new(truth, 3).unwrap();
            assert!((ari(&labels, &t).unwrap() - 1.0).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn kmeans_k_equals_n_zero_objective() {
        let p = profiles_from(vec![vec![0.0], vec![5.0], vec![9.0]]);
        let labels = kmeans_cluster(&p, 3, 1).unwrap();
        assert_eq!(labels.count(), 3);
    }

    #[test]
    fn evaluate_report_in_range_and_definitional_average() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let p = ProfileMatrix::new(Array2::from_shape_fn((n, 3), |_| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let b = DenseLabels::from_raw(&(0..n).map(|i| i % 2).collect::<Vec<_>>());
        let l = DenseLabels::from_raw(&(0..n).map(|i| i % 4).collect::<Vec<_>>());
        let rep = evaluate(&p, &b, &l, &EvalConfig::default()).unwrap();
        for s in rep.scores() {
            assert!((0.0..=1.0).contains(&s), "score {s} out of range");
        }
        assert!((rep.avg_all - (rep.avg_batch + rep.avg_label) / 2.0).abs() < 1e-15);
    }
}
