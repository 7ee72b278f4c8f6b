//! Feature preprocessing: control-based variation filtering, MAD
//! normalization, rank-based inverse normal transform, correlation
//! feature selection and optional PCA.
//!
//! Pipeline order is fixed: variation filter, MAD, INT, correlation
//! filter, PCA.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::core_model::{DenseLabels, ProfileMatrix};
use crate::error::{BalansError, Result};
use crate::numeric::inv_norm_cdf;

/// Marks negative-control samples and the grouping they are pooled over.
#[derive(Debug, Clone)]
pub struct ControlMask {
    pub is_control: Vec<bool>,
    pub grouping: DenseLabels,
}

impl ControlMask {
    pub fn new(is_control: Vec<bool>, grouping: DenseLabels) -> Result<Self> {
        if is_control.len() != grouping.len() {
            return Err(BalansError::DimensionMismatch {
                what: "control mask",
                got: is_control.len(),
                expected: grouping.len(),
            });
        }
        let mask = Self {
            is_control,
            grouping,
        };
        for (g, members) in mask.grouping.groups().iter().enumerate() {
            let controls = members.iter().filter(|&&i| mask.is_control[i]).count();
            if controls < 2 {
                return Err(BalansError::TooFewControls {
                    group: g,
                    got: controls,
                });
            }
        }
        Ok(mask)
    }

    /// Everything is a control, one group per label id.
    pub fn all_controls(grouping: DenseLabels) -> Result<Self> {
        let n = grouping.len();
        Self::new(vec![true; n], grouping)
    }

    fn control_indices(&self, group: usize) -> Vec<usize> {
        self.grouping.groups()[group]
            .iter()
            .copied()
            .filter(|&i| self.is_control[i])
            .collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median and median absolute deviation of a sample.
fn median_mad(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&mut dev);
    (med, mad)
}

/// Retains feature f iff in every group the control coefficient of
/// variation MAD / median is at least `threshold`. A zero median makes
/// the coefficient undefined and the feature is dropped.
pub fn variation_filter(
    profiles: &ProfileMatrix,
    controls: &ControlMask,
    threshold: f64,
) -> Vec<usize> {
    let d = profiles.d();
    let groups: Vec<Vec<usize>> = (0..controls.grouping.count())
        .map(|g| controls.control_indices(g))
        .collect();
    (0..d)
        .filter(|&f| {
            groups.iter().all(|idx| {
                let vals: Vec<f64> = idx.iter().map(|&i| profiles.data()[(i, f)]).collect();
                let (med, mad) = median_mad(&vals);
                if med == 0.0 {
                    return false;
                }
                mad / med >= threshold
            })
        })
        .collect()
}

/// Shifts by the group-control median and scales by the group-control MAD.
pub fn mad_normalize(profiles: &ProfileMatrix, controls: &ControlMask) -> Result<ProfileMatrix> {
    let (n, d) = (profiles.n(), profiles.d());
    let mut out = profiles.data().clone();
    for g in 0..controls.grouping.count() {
        let ctrl = controls.control_indices(g);
        let members: Vec<usize> = controls.grouping.groups()[g].clone();
        for f in 0..d {
            let vals: Vec<f64> = ctrl.iter().map(|&i| profiles.data()[(i, f)]).collect();
            let (med, mad) = median_mad(&vals);
            if mad == 0.0 {
                return Err(BalansError::ZeroMad { feature: f, group: g });
            }
            for &i in &members {
                out[(i, f)] = (profiles.data()[(i, f)] - med) / mad;
            }
        }
    }
    let _ = n;
    ProfileMatrix::new(out)
}

/// Average 1-based ranks with ties sharing their mean rank.
fn average_ranks(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].partial_cmp(&column[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && column[order[j + 1]] == column[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based inverse normal transform with offset c = 3/8:
/// y_i = PhiInv((r_i - c) / (N - 2c + 1)).
pub fn rank_int(column: &[f64]) -> Vec<f64> {
    const C: f64 = 3.0 / 8.0;
    let n = column.len() as f64;
    assert!(column.len() >= 2, "rank_int needs N >= 2");
    average_ranks(column)
        .into_iter()
        .map(|r| inv_norm_cdf((r - C) / (n - 2.0 * C + 1.0)))
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

/// Greedy redundancy elimination: while any retained pair has |r| above
/// the threshold, drop the participating feature with the largest total
/// absolute correlation to all other retained features (higher index
/// dropped on ties).
pub fn correlation_select(profiles: &ProfileMatrix, threshold: f64) -> Vec<usize> {
    assert!(threshold > 0.0 && threshold < 1.0);
    let d = profiles.d();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|f| profiles.data().column(f).to_vec())
        .collect();
    let mut corr = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in (i + 1)..d {
            let r = pearson(&cols[i], &cols[j]);
            corr[i][j] = r;
            corr[j][i] = r;
        }
    }
    let mut retained: Vec<usize> = (0..d).collect();
    loop {
        let mut offenders: Vec<usize> = Vec::new();
        for (ai, &a) in retained.iter().enumerate() {
            for &b in &retained[ai + 1..] {
                if corr[a][b].abs() > threshold {
                    if !offenders.contains(&a) {
                        offenders.push(a);
                    }
                    if !offenders.contains(&b) {
                        offenders.push(b);
                    }
                }
            }
        }
        if offenders.is_empty() {
            return retained;
        }
        let total = |f: usize| -> f64 {
            retained
                .iter()
                .filter(|&&g| g != f)
                .map(|&g| corr[f][g].abs())
                .sum()
        };
        // Largest total correlation loses; on ties the lower index is kept.
        let drop = *offenders
            .iter()
            .max_by(|&&a, &&b| {
                total(a)
                    .partial_cmp(&total(b))
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .unwrap();
        retained.retain(|&f| f != drop);
    }
}

/// Keeps only the listed feature columns.
pub fn select_features(profiles: &ProfileMatrix, features: &[usize]) -> Result<ProfileMatrix> {
    if features.is_empty() {
        return Err(BalansError::InvalidInput(
            "no features survive filtering".into(),
        ));
    }
    let n = profiles.n();
    let mut out = Array2::zeros((n, features.len()));
    for (fi, &f) in features.iter().enumerate() {
        for i in 0..n {
            out[(i, fi)] = profiles.data()[(i, f)];
        }
    }
    ProfileMatrix::new(out)
}

/// Projects mean-centered data onto the top `dims` principal axes of the
/// d x d covariance, computed by exact symmetric eigendecomposition.
/// Component signs are fixed so each axis's largest-magnitude loading is
/// positive.
pub fn pca_project(profiles: &ProfileMatrix, dims: usize) -> Result<ProfileMatrix> {
    let (n, d) = (profiles.n(), profiles.d());
    if dims < 1 || dims > d {
        return Err(BalansError::InvalidHyperParam(format!(
            "pca dims {dims} not in [1, {d}]"
        )));
    }
    let x = profiles.data();
    let mean: Vec<f64> = (0..d)
        .map(|f| x.column(f).iter().sum::<f64>() / n as f64)
        .collect();
    let mut centered = DMatrix::zeros(n, d);
    for i in 0..n {
        for f in 0..d {
            centered[(i, f)] = x[(i, f)] - mean[f];
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.transpose() * &centered / denom;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut basis = DMatrix::zeros(d, dims);
    for (col, &e) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(e);
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[(r, col)] = sign * v[r];
        }
    }
    let proj = centered * basis;
    let mut out = Array2::zeros((n, dims));
    for i in 0..n {
        for f in 0..dims {
            out[(i, f)] = proj[(i, f)];
        }
    }
    ProfileMatrix::new(out)
}
