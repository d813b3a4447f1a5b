//! Reference computations that do not share code paths with the ELBO:
//! Monte-Carlo marginal likelihoods, exhaustive enumeration, central finite
//! differences and grid search.

use std::fmt;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, TargetType};
use crate::error::{ensure, Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::special::{log_sigmoid, sample_dirichlet};

/// Largest document the marginal-likelihood oracles accept.
pub const MAX_ORACLE_TOKENS: u64 = 12;
pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Exact,
    MonteCarlo,
    Grid,
}

impl fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMethod::Exact => "exact",
            OracleMethod::MonteCarlo => "monte_carlo",
            OracleMethod::Grid => "grid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: OracleMethod,
}

impl OracleEstimate {
    pub fn exact(value: f64) -> Self {
        OracleEstimate {
            value,
            stderr: 0.0,
            method: OracleMethod::Exact,
        }
    }
}

/// Log-density of the target given topic proportions.
pub fn target_log_density(
    y: f64,
    theta: &[f64],
    eta: &Array1<f64>,
    log_delta: f64,
    target_type: TargetType,
) -> f64 {
    let mean: f64 = theta.iter().zip(eta.iter()).map(|(t, e)| t * e).sum();
    match target_type {
        TargetType::Real => {
            let delta = log_delta.exp();
            -0.5 * (2.0 * std::f64::consts::PI * delta).ln() - (y - mean).powi(2) / (2.0 * delta)
        }
        TargetType::Binary => log_sigmoid((2.0 * y - 1.0) * mean),
    }
}

/// `ln prod_n [p (beta theta)_{w_n} + (1 - p) pi_{w_n}]` for fixed `theta`.
fn log_word_factor(
    doc: &Document,
    theta: &[f64],
    beta: &ndarray::Array2<f64>,
    pi: &Array1<f64>,
    config: &ModelConfig,
) -> f64 {
    doc.entries()
        .iter()
        .map(|&(w, c)| {
            let topic: f64 = theta
                .iter()
                .enumerate()
                .map(|(k, t)| t * beta[[k, w]])
                .sum();
            let mix = if config.channel_enabled {
                config.p * topic + (1.0 - config.p) * pi[w]
            } else {
                topic
            };
            c as f64 * mix.ln()
        })
        .sum()
}

/// Monte-Carlo estimate of `ln p(w, y)` for one document, averaging over
/// `theta ~ Dir(alpha)` with switches and topic assignments summed out
/// per token. The standard error is propagated to the log scale by the
/// delta method. `target = None` drops the target factor.
pub fn mc_marginal_loglik(
    doc: &Document,
    target: Option<f64>,
    params: &ModelParams,
    config: &ModelConfig,
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    config.validate()?;
    ensure!(
        doc.total_tokens() <= MAX_ORACLE_TOKENS,
        "marginal-likelihood oracle handles at most {MAX_ORACLE_TOKENS} tokens, document has {}",
        doc.total_tokens()
    );
    let beta = params.beta();
    let pi = params.pi();
    let log_joint = |theta: &[f64]| {
        let t = target.map_or(0.0, |y| {
            target_log_density(y, theta, &params.eta, params.log_delta, config.target_type)
        });
        t + log_word_factor(doc, theta, &beta, &pi, config)
    };
    if config.k == 1 {
        return Ok(OracleEstimate::exact(log_joint(&[1.0])));
    }
    ensure!(
        samples >= MIN_MC_SAMPLES,
        "at least {MIN_MC_SAMPLES} samples are required, got {samples}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logs: Vec<f64> = (0..samples)
        .map(|_| log_joint(&sample_dirichlet(&mut rng, &config.alpha)))
        .collect();
    Ok(log_mean_exp_with_stderr(&logs))
}

/// `ln mean(exp(x))` with a delta-method standard error.
pub fn log_mean_exp_with_stderr(logs: &[f64]) -> OracleEstimate {
    let n = logs.len() as f64;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let var = scaled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    OracleEstimate {
        value: max + mean.ln(),
        stderr: (var / n).sqrt() / mean,
        method: OracleMethod::MonteCarlo,
    }
}

/// Exact `ln p(w, y)` for a single-topic model by summing over every
/// switch configuration of the document's tokens.
pub fn enumerate_single_topic_loglik(
    doc: &Document,
    target: Option<f64>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f64> {
    ensure!(config.k == 1, "enumeration oracle requires a single topic");
    ensure!(
        doc.total_tokens() <= MAX_ORACLE_TOKENS,
        "enumeration oracle handles at most {MAX_ORACLE_TOKENS} tokens"
    );
    let beta = params.beta();
    let pi = params.pi();
    let tokens = doc.tokens();
    let n = tokens.len();
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        let mut prob = 1.0;
        for (i, &w) in tokens.iter().enumerate() {
            let relevant = mask & (1 << i) != 0;
            prob *= if !config.channel_enabled {
                if relevant {
                    beta[[0, w]]
                } else {
                    0.0
                }
            } else if relevant {
                config.p * beta[[0, w]]
            } else {
                (1.0 - config.p) * pi[w]
            };
        }
        total += prob;
    }
    let t = target.map_or(0.0, |y| {
        target_log_density(y, &[1.0], &params.eta, params.log_delta, config.target_type)
    });
    Ok(total.ln() + t)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(objective: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    ensure!(step > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = objective(&x);
        x[i] = orig - step;
        let down = objective(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(i));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Best grid value of a one-dimensional objective; ties keep the first.
pub fn grid_optimal_coordinate<F>(objective: F, grid: &[f64]) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &g in grid {
        let val = objective(g);
        if val > best.1 || best.0.is_nan() && !val.is_nan() {
            best = (g, val);
        }
    }
    best
}

/// `{0, 1/n, ..., 1}`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}
