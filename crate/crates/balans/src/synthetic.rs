//! Synthetic data: a hierarchical Gaussian mixture with batch-shifted
//! cluster centers, and a block-structured affinity model A = A0 + E
//! with exponential noise.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core_model::{BatchLabels, ClusterLabels, DenseLabels, ProfileMatrix};
use crate::error::{BalansError, Result};

/// Hierarchical Gaussian mixture: label centers mu_l ~ N(0, sigma_label^2 I),
/// batch-specific centers mu_{l,b} ~ N(mu_l, sigma_batch^2 I), observations
/// x ~ N(mu_{l,b}, sigma_noise^2 I).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmSpec {
    pub n: usize,
    pub d: usize,
    pub labels: usize,
    pub batches: usize,
    pub sigma_label: f64,
    pub sigma_batch: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl Default for GmmSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 20,
            labels: 4,
            batches: 2,
            sigma_label: 5.0,
            sigma_batch: 1.0,
            sigma_noise: 0.5,
            seed: 0,
        }
    }
}

pub struct GmmSample {
    pub profiles: ProfileMatrix,
    pub batches: BatchLabels,
    pub labels: ClusterLabels,
}

pub fn generate_gmm(spec: &GmmSpec) -> Result<GmmSample> {
    if spec.n == 0 || spec.d == 0 || spec.labels == 0 || spec.batches == 0 {
        return Err(BalansError::InvalidHyperParam(
            "gmm sizes must be positive".into(),
        ));
    }
    if spec.n < spec.labels * spec.batches {
        return Err(BalansError::InvalidHyperParam(format!(
            "gmm needs n >= labels * batches ({} < {})",
            spec.n,
            spec.labels * spec.batches
        )));
    }
    for (name, s) in [
        ("sigma_label", spec.sigma_label),
        ("sigma_batch", spec.sigma_batch),
        ("sigma_noise", spec.sigma_noise),
    ] {
        if !s.is_finite() || s < 0.0 {
            return Err(BalansError::InvalidHyperParam(format!(
                "{name} must be finite and >= 0, got {s}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut label_centers = vec![vec![0.0; spec.d]; spec.labels];
    for c in &mut label_centers {
        for v in c.iter_mut() {
            *v = spec.sigma_label * normal(&mut rng);
        }
    }
    let mut pair_centers = vec![vec![vec![0.0; spec.d]; spec.batches]; spec.labels];
    for (l, per_batch) in pair_centers.iter_mut().enumerate() {
        for c in per_batch.iter_mut() {
            for (f, v) in c.iter_mut().enumerate() {
                *v = label_centers[l][f] + spec.sigma_batch * normal(&mut rng);
            }
        }
    }

    // Round-robin over (label, batch) pairs so every pair is populated.
    let mut data = Array2::zeros((spec.n, spec.d));
    let mut labels = Vec::with_capacity(spec.n);
    let mut batches = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let l = i % spec.labels;
        let b = (i / spec.labels) % spec.batches;
        labels.push(l);
        batches.push(b);
        for f in 0..spec.d {
            data[(i, f)] = pair_centers[l][b][f] + spec.sigma_noise * normal(&mut rng);
        }
    }
    Ok(GmmSample {
        profiles: ProfileMatrix::new(data)?,
        batches: DenseLabels::new(batches, spec.batches)?,
        labels: DenseLabels::new(labels, spec.labels)?,
    })
}

/// Block-structured affinity: A0 is block diagonal with constant value
/// p_k on cluster k, and E is symmetric with Exp(rate lambda) entries
/// above the diagonal and Exp(rate lambda / 2) on the diagonal.
/// `lambda = 0` disables the noise entirely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockModelSpec {
    /// Cluster sizes n_k (all positive).
    pub sizes: Vec<usize>,
    /// Within-cluster affinity p_k, one per cluster, each > 0.
    pub strengths: Vec<f64>,
    /// Exponential noise rate; the mean perturbation is 1 / lambda.
    pub lambda: f64,
    pub seed: u64,
}

pub struct BlockModelSample {
    pub affinity: Array2<f64>,
    pub labels: ClusterLabels,
}

pub fn generate_block_affinity(spec: &BlockModelSpec) -> Result<BlockModelSample> {
    if spec.sizes.is_empty() || spec.sizes.iter().any(|&s| s == 0) {
        return Err(BalansError::InvalidHyperParam(
            "block sizes must be non-empty and positive".into(),
        ));
    }
    if spec.strengths.len() != spec.sizes.len() {
        return Err(BalansError::DimensionMismatch {
            what: "block strengths",
            got: spec.strengths.len(),
            expected: spec.sizes.len(),
        });
    }
    if spec.strengths.iter().any(|&p| !p.is_finite() || p <= 0.0) {
        return Err(BalansError::InvalidHyperParam(
            "block strengths must be finite and > 0".into(),
        ));
    }
    if !spec.lambda.is_finite() || spec.lambda < 0.0 {
        return Err(BalansError::InvalidHyperParam(format!(
            "lambda must be finite and >= 0, got {}",
            spec.lambda
        )));
    }
    let n: usize = spec.sizes.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (k, &sz) in spec.sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(k).take(sz));
    }

    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                a[(i, j)] = spec.strengths[labels[i]];
            }
        }
    }
    if spec.lambda > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let off = Exp::new(spec.lambda).expect("validated above");
        let diag = Exp::new(spec.lambda / 2.0).expect("validated above");
        for i in 0..n {
            a[(i, i)] += diag.sample(&mut rng);
            for j in (i + 1)..n {
                let e: f64 = off.sample(&mut rng);
                a[(i, j)] += e;
                a[(j, i)] += e;
            }
        }
    }
    Ok(BlockModelSample {
        affinity: a,
        labels: DenseLabels::new(labels, spec.sizes.len())?,
    })
}
