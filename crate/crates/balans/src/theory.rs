//! Monte Carlo harness for the coverage, spectral-decay and runtime
//! guarantees, operating on synthetic block models.
//!
//! Sampling here acts directly on rows of the affinity matrix (no
//! kernel, no elbow sparsification): the guarantees assume strictly
//! positive noisy entries, which sparsification would destroy. Spectral
//! experiments scale the exponential noise rate with n (lambda_eff =
//! lambda * n) so the low-noise regime assumption stays satisfied as
//! problems grow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core_model::HyperParams;
use crate::error::{BalansError, Result};
use crate::numeric::operator_norm_sym;
use crate::pipeline::correct;
use crate::sampler::{run_fixed_m, run_until, MatrixRowSource};
use crate::smoother::nystrom_from_rows;
use crate::synthetic::{generate_block_affinity, generate_gmm, BlockModelSpec, GmmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerChoice {
    Adaptive,
    Uniform,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageExperimentResult {
    pub t: usize,
    pub m: usize,
    pub trials: usize,
    pub sampler: SamplerChoice,
    /// Rows sampled per cluster, one vector per trial; each sums to m.
    pub counts: Vec<Vec<usize>>,
    /// Whether every cluster reached t samples, per trial.
    pub successes: Vec<bool>,
    pub success_rate: f64,
}

/// Runs `trials` independent draws of m rows from fresh noisy affinity
/// matrices and reports how often every cluster contributed at least t
/// rows. Adaptive sampling uses blocks of length K (one pass of the
/// inverse-coverage rule resolves one cluster per step in the noiseless
/// case); the uniform baseline draws m indices without replacement.
pub fn run_coverage_experiment(
    spec: &BlockModelSpec,
    t: usize,
    m: usize,
    trials: usize,
    sampler: SamplerChoice,
) -> Result<CoverageExperimentResult> {
    let n: usize = spec.sizes.iter().sum();
    if m > n {
        return Err(BalansError::InvalidHyperParam(format!(
            "coverage experiment needs m <= n ({m} > {n})"
        )));
    }
    let k = spec.sizes.len();
    let counts: Vec<Vec<usize>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<Vec<usize>> {
            let trial_spec = BlockModelSpec {
                seed: spec.seed.wrapping_add(trial.wrapping_mul(0x9e37_79b9)),
                ..spec.clone()
            };
            let sample = generate_block_affinity(&trial_spec)?;
            let sampled = match sampler {
                SamplerChoice::Adaptive => {
                    let source = MatrixRowSource {
                        matrix: &sample.affinity,
                    };
                    run_fixed_m(&source, m, k, trial_spec.seed)?.0
                }
                SamplerChoice::Uniform => {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_spec.seed);
                    rand::seq::index::sample(&mut rng, n, m).into_vec()
                }
            };
            let mut per_cluster = vec![0usize; k];
            for &i in &sampled {
                per_cluster[sample.labels.get(i)] += 1;
            }
            Ok(per_cluster)
        })
        .collect::<Result<_>>()?;
    let successes: Vec<bool> = counts
        .iter()
        .map(|c| c.iter().all(|&x| x >= t))
        .collect();
    let success_rate = successes.iter().filter(|&&s| s).count() as f64 / trials.max(1) as f64;
    Ok(CoverageExperimentResult {
        t,
        m,
        trials,
        sampler,
        counts,
        successes,
        success_rate,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum SpectralMode {
    /// Keep drawing until every cluster has at least t rows, using the
    /// ground-truth cluster ids as the stopping oracle.
    GroundTruthStopped,
    /// Draw exactly ceil(c * t * K * ln K) rows.
    FixedBudget { c: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralExperimentResult {
    pub t_values: Vec<usize>,
    /// Operator-norm errors, one inner vector per t (length = trials).
    pub errors: Vec<Vec<f64>>,
    pub median_errors: Vec<f64>,
    /// Least-squares slope of log median error against log t; NaN when
    /// fewer than two positive medians exist.
    pub slope: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn log_log_slope(ts: &[usize], errors: &[f64]) -> f64 {
    let points: Vec<(f64, f64)> = ts
        .iter()
        .zip(errors)
        .filter(|&(_, &e)| e > 0.0)
        .map(|(&t, &e)| ((t as f64).ln(), e.ln()))
        .collect();
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

/// For each t, samples rows adaptively from a fresh noisy affinity,
/// reconstructs via the sampled-row low-rank estimator and measures the
/// operator-norm distance to the noiseless block matrix A0.
pub fn run_spectral_experiment(
    spec: &BlockModelSpec,
    t_values: &[usize],
    trials: usize,
    mode: SpectralMode,
) -> Result<SpectralExperimentResult> {
    let n: usize = spec.sizes.iter().sum();
    let k = spec.sizes.len();
    let max_t = t_values.iter().copied().max().unwrap_or(0);
    if max_t * k > n {
        return Err(BalansError::InvalidHyperParam(format!(
            "largest t implies more rows than n ({} > {n})",
            max_t * k
        )));
    }
    // Noiseless reference A0.
    let a0 = generate_block_affinity(&BlockModelSpec {
        lambda: 0.0,
        ..spec.clone()
    })?
    .affinity;
    let lambda_eff = spec.lambda * n as f64;

    let mut errors = Vec::with_capacity(t_values.len());
    for (ti, &t) in t_values.iter().enumerate() {
        let per_t: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|trial| -> Result<f64> {
                let trial_spec = BlockModelSpec {
                    lambda: lambda_eff,
                    seed: spec
                        .seed
                        .wrapping_add(trial.wrapping_mul(0x9e37_79b9))
                        .wrapping_add(ti as u64),
                    ..spec.clone()
                };
                let sample = generate_block_affinity(&trial_spec)?;
                let source = MatrixRowSource {
                    matrix: &sample.affinity,
                };
                let (idx, rows) = match mode {
                    SpectralMode::GroundTruthStopped => {
                        let labels = &sample.labels;
                        run_until(&source, k, trial_spec.seed, |sampled| {
                            let mut c = vec![0usize; k];
                            for &i in sampled {
                                c[labels.get(i)] += 1;
                            }
                            c.iter().all(|&x| x >= t)
                        })?
                    }
                    SpectralMode::FixedBudget { c } => {
                        let m = ((c * t as f64 * k as f64 * (k as f64).ln()).ceil() as usize)
                            .max(t * k)
                            .min(n);
                        run_fixed_m(&source, m, k, trial_spec.seed)?
                    }
                };
                let a_hat = nystrom_from_rows(&idx, &rows, n, n)?;
                let mut diff = a_hat;
                for i in 0..n {
                    for j in 0..n {
                        diff[(i, j)] -= a0[(i, j)];
                    }
                }
                Ok(operator_norm_sym(&diff, 1e-8, 10_000))
            })
            .collect::<Result<_>>()?;
        errors.push(per_t);
    }
    let median_errors: Vec<f64> = errors.iter().map(|e| median(e)).collect();
    let slope = log_log_slope(t_values, &median_errors);
    Ok(SpectralExperimentResult {
        t_values: t_values.to_vec(),
        errors,
        median_errors,
        slope,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RuntimeRow {
    pub n: usize,
    pub seconds: f64,
    pub m: usize,
}

/// Times the full correction pipeline at each n (generation excluded).
pub fn run_runtime_experiment(
    n_values: &[usize],
    template: &GmmSpec,
    params: &HyperParams,
) -> Result<Vec<RuntimeRow>> {
    let mut table = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let sample = generate_gmm(&GmmSpec {
            n,
            ..template.clone()
        })?;
        let start = std::time::Instant::now();
        let out = correct(&sample.profiles, &sample.batches, params, false)?;
        table.push(RuntimeRow {
            n,
            seconds: start.elapsed().as_secs_f64(),
            m: out.info.m,
        });
    }
    Ok(table)
}
