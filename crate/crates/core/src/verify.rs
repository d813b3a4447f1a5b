//! Self-checks that compare the ELBO, its gradient and the closed-form
//! selector update against the reference computations in [`crate::oracle`].

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, TargetType, Vocab};
use crate::elbo::{compute_elbo, compute_gradients, refresh_phi, CoordinateLayout};
use crate::error::Result;
use crate::model::{init_params, ModelConfig, ModelParams, VariationalState};
use crate::oracle::{
    enumerate_single_topic_loglik, finite_difference_gradient, grid_optimal_coordinate,
    mc_marginal_loglik, unit_grid,
};
use crate::trainers::ca_update_varphi;

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const GRID_POINTS: usize = 1000;
const BOUND_INSTANCES: u64 = 5;
const LOGIT_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyShape {
    pub docs: usize,
    pub vocab: usize,
    pub k: usize,
    pub max_tokens: usize,
    pub target_type: TargetType,
    pub channel: bool,
}

impl Default for TinyShape {
    fn default() -> Self {
        TinyShape {
            docs: 3,
            vocab: 8,
            k: 2,
            max_tokens: 8,
            target_type: TargetType::Real,
            channel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub corpus: Corpus,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub state: VariationalState,
}

/// Random small instance with every parameter and variational factor
/// perturbed away from its initial value.
pub fn tiny_instance(seed: u64, shape: &TinyShape) -> Result<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<Document> = (0..shape.docs)
        .map(|_| {
            let n = rng.random_range(1..=shape.max_tokens);
            Document::from_tokens((0..n).map(|_| rng.random_range(0..shape.vocab)))
        })
        .collect();
    let targets: Vec<f64> = (0..shape.docs)
        .map(|_| match shape.target_type {
            TargetType::Real => rng.random_range(-2.0..2.0),
            TargetType::Binary => f64::from(u8::from(rng.random_bool(0.5))),
        })
        .collect();
    let corpus = Corpus::new(
        Vocab::synthetic(shape.vocab)?,
        docs,
        targets,
        shape.target_type,
    )?;
    let mut config = ModelConfig::new(shape.k, rng.random_range(0.15..0.85), shape.target_type);
    config.channel_enabled = shape.channel;
    let (mut params, mut state) = init_params(&config, &corpus, seed)?;
    for b in params.beta_logits.iter_mut() {
        *b += rng.random_range(-1.0..1.0);
    }
    for b in params.pi_logits.iter_mut() {
        *b += rng.random_range(-1.0..1.0);
    }
    for e in params.eta.iter_mut() {
        *e = rng.random_range(-2.0..2.0);
    }
    params.log_delta = rng.random_range(-0.7..0.7);
    for g in state.gamma.iter_mut() {
        *g = rng.random_range(0.4..5.0);
    }
    for u in state.varphi_logits.iter_mut() {
        *u = rng.random_range(-2.5..2.5);
    }
    for block in state.phi.iter_mut() {
        for mut row in block.rows_mut() {
            let raw: Vec<f64> = (0..shape.k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (dst, r) in row.iter_mut().zip(raw) {
                *dst = r / s;
            }
        }
    }
    Ok(TinyInstance {
        corpus,
        config,
        params,
        state,
    })
}

/// One line of the `verify` report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} value={:.10e} reference={:.10e} {}",
            self.name,
            self.value,
            self.reference,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Single-topic Monte-Carlo estimate against exhaustive switch enumeration.
pub fn check_single_topic(seed: u64, samples: usize) -> Result<Check> {
    let shape = TinyShape {
        docs: 1,
        vocab: 4,
        k: 1,
        max_tokens: 6,
        ..Default::default()
    };
    let inst = tiny_instance(seed, &shape)?;
    let doc = &inst.corpus.documents()[0];
    let y = inst.corpus.targets()[0];
    let mc = mc_marginal_loglik(doc, Some(y), &inst.params, &inst.config, samples, seed)?;
    let exact = enumerate_single_topic_loglik(doc, Some(y), &inst.params, &inst.config)?;
    Ok(Check {
        name: "single_topic_exact".into(),
        value: mc.value,
        reference: exact,
        passed: (mc.value - exact).abs() <= 1e-9 * exact.abs().max(1.0),
    })
}

/// Single-document ELBO against the Monte-Carlo marginal likelihood plus
/// three standard errors.
pub fn check_bound(seed: u64, samples: usize) -> Result<Check> {
    let shape = TinyShape {
        docs: 1,
        vocab: 5,
        k: 2,
        max_tokens: 8,
        ..Default::default()
    };
    let inst = tiny_instance(seed, &shape)?;
    let mut state = inst.state.clone();
    refresh_phi(&inst.corpus, &[0], &inst.params, &mut state, &inst.config);
    let elbo = compute_elbo(&inst.corpus, &[0], &inst.params, &state, &inst.config)?.total;
    let mc = mc_marginal_loglik(
        &inst.corpus.documents()[0],
        Some(inst.corpus.targets()[0]),
        &inst.params,
        &inst.config,
        samples,
        seed.wrapping_add(1),
    )?;
    let reference = mc.value + 3.0 * mc.stderr;
    Ok(Check {
        name: format!("elbo_bound_{seed}"),
        value: elbo,
        reference,
        passed: elbo <= reference,
    })
}

/// Worst relative error between the analytic gradient and central
/// differences over coordinates with magnitude above `1e-8`.
pub fn check_gradient(seed: u64) -> Result<Check> {
    let inst = tiny_instance(seed, &TinyShape::default())?;
    let batch: Vec<usize> = (0..inst.corpus.len()).collect();
    let layout =
        CoordinateLayout::new(inst.config.k, inst.corpus.vocab_size(), batch.clone(), true);
    let x0 = layout.pack(&inst.params, &inst.state);
    let analytic = layout.pack_gradient(&compute_gradients(
        &inst.corpus,
        &batch,
        &inst.params,
        &inst.state,
        &inst.config,
    )?);
    let objective = |x: &[f64]| {
        let mut p = inst.params.clone();
        let mut s = inst.state.clone();
        layout.unpack(x, &mut p, &mut s);
        compute_elbo(&inst.corpus, &batch, &p, &s, &inst.config).map_or(f64::NAN, |e| e.total)
    };
    let numeric = finite_difference_gradient(objective, &x0, FD_STEP)?;
    let worst = analytic
        .iter()
        .zip(&numeric)
        .filter(|(a, _)| a.abs() > 1e-8)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()))
        .fold(0.0, f64::max);
    Ok(Check {
        name: "gradient_fd".into(),
        value: worst,
        reference: FD_REL_TOL,
        passed: worst < FD_REL_TOL,
    })
}

/// Largest distance between the closed-form selector update and a grid
/// search on the ELBO over `{0, 0.001, ..., 1}`.
pub fn check_selector_grid(seed: u64) -> Result<Check> {
    let inst = tiny_instance(seed, &TinyShape::default())?;
    let batch: Vec<usize> = (0..inst.corpus.len()).collect();
    let mut updated = inst.state.clone();
    ca_update_varphi(&inst.corpus, &inst.params, &mut updated, &inst.config)?;
    let counts = inst.corpus.word_counts();
    let grid = unit_grid(GRID_POINTS);
    let mut worst: f64 = 0.0;
    for w in (0..inst.corpus.vocab_size()).filter(|&w| counts[w] > 0) {
        let objective = |s: f64| {
            let mut st = inst.state.clone();
            st.varphi_logits[w] = (s.ln() - (-s).ln_1p()).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            compute_elbo(&inst.corpus, &batch, &inst.params, &st, &inst.config)
                .map_or(f64::NAN, |e| e.total)
        };
        let (best, _) = grid_optimal_coordinate(objective, &grid);
        let closed = 1.0 / (1.0 + (-updated.varphi_logits[w]).exp());
        worst = worst.max((best - closed).abs());
    }
    let step = 1.0 / GRID_POINTS as f64;
    Ok(Check {
        name: "selector_grid".into(),
        value: worst,
        reference: step,
        passed: worst <= step + 1e-12,
    })
}

/// Every check, seeded from `seed`, with `samples` Monte-Carlo draws for
/// the likelihood estimates.
pub fn run_checks(seed: u64, samples: usize) -> Result<Vec<Check>> {
    let mut checks = vec![check_single_topic(seed, samples)?];
    for i in 0..BOUND_INSTANCES {
        checks.push(check_bound(seed.wrapping_add(i), samples)?);
    }
    checks.push(check_gradient(seed)?);
    checks.push(check_selector_grid(seed)?);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_pass_on_default_seed() {
        for check in run_checks(0, crate::oracle::MIN_MC_SAMPLES).unwrap() {
            assert!(check.passed, "{check}");
        }
    }

    #[test]
    fn report_line_format() {
        let c = Check {
            name: "x".into(),
            value: 1.0,
            reference: 2.0,
            passed: false,
        };
        assert!(c.to_string().starts_with("x value=1.0"));
        assert!(c.to_string().ends_with("FAIL"));
    }
}
