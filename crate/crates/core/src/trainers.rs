//! Fitting by mini-batch ADAM on the ELBO and by closed-form coordinate
//! ascent.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;

use crate::corpus::{Corpus, TargetType};
use crate::elbo::{compute_elbo_and_gradients, corpus_elbo, optimal_phi, target_term};
use crate::error::{ensure, Error, Result};
use crate::evaluation::{auc, rmse};
use crate::model::{
    expected_theta, expected_theta_outer, init_params, ModelConfig, ModelParams, VariationalState,
};
use crate::prediction::{predict_corpus, PredictConfig};
use crate::special::{digamma, ln_gamma, sigmoid, softmax_in_place, solve_dense, trigamma};

/// Floor applied to topic and additional-topic probabilities before
/// renormalizing in the closed-form updates.
pub const SIMPLEX_FLOOR: f64 = 1e-12;
const ETA_RIDGE: f64 = 1e-6;
const DELTA_FLOOR: f64 = 1e-6;
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainerKind {
    #[default]
    Sgd,
    Ca,
}

impl FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(TrainerKind::Sgd),
            "ca" => Ok(TrainerKind::Ca),
            _ => Err(Error::InvalidArgument(format!(
                "unknown trainer '{s}' (expected sgd or ca)"
            ))),
        }
    }
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::Sgd => "sgd",
            TrainerKind::Ca => "ca",
        })
    }
}

/// How the SGD trainer handles the responsibilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiMode {
    /// Reset to the closed-form optimum before every gradient evaluation.
    #[default]
    ClosedForm,
    /// Treat `ln phi` as free coordinates updated by ADAM.
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub trainer: TrainerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub ca_sweeps: usize,
    /// Stop when the relative ELBO change over an epoch (or sweep) falls
    /// below this.
    pub convergence_tol: f64,
    /// Epochs (or sweeps) between trace records.
    pub log_every: usize,
    pub phi_mode: PhiMode,
    /// Alternating (phi, gamma) refinements of each batch document before
    /// its gradient step.
    pub local_iterations: usize,
    /// Ascent steps per gamma update in the local and coordinate-ascent
    /// refinements.
    pub gamma_steps: usize,
    pub gamma_step_size: f64,
    /// Stop after this many trace records without a validation improvement.
    pub early_stopping: Option<usize>,
    /// Worker threads for gradient reductions; `None` or 1 is serial.
    pub workers: Option<usize>,
    pub predict: PredictConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trainer: TrainerKind::Sgd,
            epochs: 200,
            batch_size: 10,
            learning_rate: 0.025,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            ca_sweeps: 200,
            convergence_tol: 1e-7,
            log_every: 1,
            phi_mode: PhiMode::ClosedForm,
            local_iterations: 3,
            gamma_steps: 5,
            gamma_step_size: 0.5,
            early_stopping: None,
            workers: None,
            predict: PredictConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.ca_sweeps >= 1, "sweeps must be at least 1");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            "ADAM decay rates must lie in [0, 1)"
        );
        ensure!(self.adam_eps > 0.0, "ADAM epsilon must be positive");
        ensure!(
            self.convergence_tol >= 0.0,
            "convergence tolerance must be nonnegative"
        );
        ensure!(self.log_every >= 1, "log_every must be at least 1");
        ensure!(
            self.gamma_step_size > 0.0,
            "gamma step size must be positive"
        );
        ensure!(
            self.predict.steps >= 1,
            "prediction needs at least one step"
        );
        Ok(())
    }

    fn pool(&self) -> Result<Option<ThreadPool>> {
        match self.workers {
            Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("cannot start {n} workers: {e}"))),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub elbo: f64,
    /// Validation RMSE (real targets) or AUC (binary targets).
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    pub stopped_early: bool,
}

impl TrainTrace {
    fn push(&mut self, record: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.step < record.step));
        self.records.push(record);
    }

    pub fn elbos(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.elbo).collect()
    }

    /// `step,elbo,val_metric`; the metric column is empty without a
    /// validation set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,elbo,val_metric\n");
        for r in &self.records {
            let metric = r.val_metric.map(|m| m.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", r.step, r.elbo, metric).unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// Moment estimates for one block of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One ascent step: `x += lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn ascend(&mut self, adam: &Adam, x: &mut [f64], grad: &[f64]) {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - adam.beta1.powi(self.t as i32);
        let c2 = 1.0 - adam.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = adam.beta1 * self.m[i] + (1.0 - adam.beta1) * g;
            self.v[i] = adam.beta2 * self.v[i] + (1.0 - adam.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] += adam.learning_rate * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
}

fn validation_metric(
    val: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    tc: &TrainConfig,
) -> Result<f64> {
    let scores = predict_corpus(val, params, config, &tc.predict);
    match config.target_type {
        TargetType::Real => rmse(&scores, val.targets()),
        TargetType::Binary => auc(&scores, val.targets()),
    }
}

/// Larger is better for AUC, smaller for RMSE.
fn improves(target_type: TargetType, new: f64, best: f64) -> bool {
    match target_type {
        TargetType::Real => new < best,
        TargetType::Binary => new > best,
    }
}

fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}

struct SgdOptimizer {
    adam: Adam,
    beta: AdamState,
    pi: AdamState,
    eta: AdamState,
    log_delta: AdamState,
    varphi: AdamState,
    gamma: Vec<AdamState>,
    phi: Vec<AdamState>,
}

/// Fits the model by mini-batch ADAM ascent on the ELBO.
///
/// Each epoch shuffles the documents with a seeded generator and walks
/// the resulting batches. Global gradients are scaled by `M / |batch|`.
/// Before each step the batch documents' local quantities are refined by
/// `local_iterations` rounds of responsibility and `gamma` updates under
/// the current global parameters.
pub fn train_sgd(
    train: &Corpus,
    val: Option<&Corpus>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, VariationalState, TrainTrace)> {
    model_config.validate_channel()?;
    train_config.validate()?;
    ensure!(!train.is_empty(), "training corpus is empty");
    if let Some(v) = val {
        ensure!(!v.is_empty(), "validation corpus is empty");
        ensure!(
            v.vocab_size() == train.vocab_size(),
            "validation vocabulary differs from training"
        );
    }
    let pool = train_config.pool()?;
    let tc = train_config;
    let m = train.len();
    let k = model_config.k;
    let v = train.vocab_size();

    let (mut params, mut state) = init_params(model_config, train, tc.seed)?;
    let mut opt = SgdOptimizer {
        adam: Adam::from_config(tc),
        beta: AdamState::new(k * v),
        pi: AdamState::new(v),
        eta: AdamState::new(k),
        log_delta: AdamState::new(1),
        varphi: AdamState::new(v),
        gamma: (0..m).map(|_| AdamState::new(k)).collect(),
        phi: if tc.phi_mode == PhiMode::Sgd {
            train
                .documents()
                .iter()
                .map(|d| AdamState::new(d.distinct() * k))
                .collect()
        } else {
            Vec::new()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut trace = TrainTrace::default();
    let mut step = 0usize;
    let mut prev_elbo: Option<f64> = None;
    let mut best: Option<(f64, ModelParams, VariationalState)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size) {
            sgd_step(
                train,
                batch,
                &mut params,
                &mut state,
                model_config,
                tc,
                &mut opt,
                pool.as_ref(),
            )?;
            step += 1;
        }

        let elbo = corpus_elbo(train, &params, &state, model_config)?.total;
        if !elbo.is_finite() {
            return Err(Error::Degenerate(format!(
                "ELBO became {elbo} in epoch {epoch}"
            )));
        }
        if epoch % tc.log_every == 0 || epoch == tc.epochs {
            let val_metric = val
                .map(|vc| validation_metric(vc, &params, model_config, tc))
                .transpose()?;
            trace.push(TraceRecord {
                step,
                elbo,
                val_metric,
            });
            if let (Some(metric), Some(patience)) = (val_metric, tc.early_stopping) {
                let better = best
                    .as_ref()
                    .is_none_or(|(b, _, _)| improves(model_config.target_type, metric, *b));
                if better {
                    best = Some((metric, params.clone(), state.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        trace.stopped_early = true;
                        break;
                    }
                }
            }
        }
        if let Some(prev) = prev_elbo {
            if relative_change(prev, elbo) < tc.convergence_tol {
                trace.converged = true;
                break;
            }
        }
        prev_elbo = Some(elbo);
    }

    if trace.stopped_early {
        if let Some((_, p, s)) = best {
            params = p;
            state = s;
        }
    }
    Ok((params, state, trace))
}

#[allow(clippy::too_many_arguments)]
fn sgd_step(
    train: &Corpus,
    batch: &[usize],
    params: &mut ModelParams,
    state: &mut VariationalState,
    config: &ModelConfig,
    tc: &TrainConfig,
    opt: &mut SgdOptimizer,
    pool: Option<&ThreadPool>,
) -> Result<()> {
    let closed_form = tc.phi_mode == PhiMode::ClosedForm;
    let log_beta = params.log_beta();
    for &d in batch {
        for _ in 0..tc.local_iterations {
            if closed_form {
                ca_update_phi_with(train, d, &log_beta, state, config);
            }
            ca_update_gamma(
                train,
                d,
                params,
                state,
                config,
                tc.gamma_steps,
                tc.gamma_step_size,
            )?;
        }
        if closed_form {
            ca_update_phi_with(train, d, &log_beta, state, config);
        }
    }

    let (_, grad) = compute_elbo_and_gradients(train, batch, params, state, config, pool)?;
    if !grad.all_finite() {
        return Err(Error::Degenerate("nonfinite gradient".into()));
    }
    let scale = train.len() as f64 / batch.len() as f64;
    let adam = opt.adam;

    let g_beta: Vec<f64> = grad.d_beta_logits.iter().map(|g| g * scale).collect();
    opt.beta.ascend(
        &adam,
        params.beta_logits.as_slice_mut().expect("contiguous"),
        &g_beta,
    );
    let g_eta: Vec<f64> = grad.d_eta.iter().map(|g| g * scale).collect();
    opt.eta.ascend(
        &adam,
        params.eta.as_slice_mut().expect("contiguous"),
        &g_eta,
    );
    if config.target_type == TargetType::Real {
        let mut ld = [params.log_delta];
        opt.log_delta
            .ascend(&adam, &mut ld, &[grad.d_log_delta * scale]);
        params.log_delta = ld[0];
    }
    if config.channel_enabled {
        let g_pi: Vec<f64> = grad.d_pi_logits.iter().map(|g| g * scale).collect();
        opt.pi.ascend(
            &adam,
            params.pi_logits.as_slice_mut().expect("contiguous"),
            &g_pi,
        );
        let g_u: Vec<f64> = grad.d_varphi_logits.iter().map(|g| g * scale).collect();
        opt.varphi.ascend(
            &adam,
            state.varphi_logits.as_slice_mut().expect("contiguous"),
            &g_u,
        );
    }

    for (i, &d) in batch.iter().enumerate() {
        let mut log_gamma: Vec<f64> = state.gamma.row(d).iter().map(|g| g.ln()).collect();
        opt.gamma[d].ascend(
            &adam,
            &mut log_gamma,
            grad.d_log_gamma[i].as_slice().expect("contiguous"),
        );
        for (dst, lg) in state.gamma.row_mut(d).iter_mut().zip(log_gamma) {
            *dst = lg.exp();
        }
        if !closed_form {
            let block = &mut state.phi[d];
            let mut logits: Vec<f64> = block
                .iter()
                .map(|f| f.max(f64::MIN_POSITIVE).ln())
                .collect();
            opt.phi[d].ascend(
                &adam,
                &mut logits,
                grad.d_phi_logits[i].as_slice().expect("contiguous"),
            );
            for (row, chunk) in block
                .rows_mut()
                .into_iter()
                .zip(logits.chunks_mut(config.k))
            {
                softmax_in_place(chunk);
                for (dst, x) in row.into_iter().zip(chunk.iter()) {
                    *dst = *x;
                }
            }
        }
    }
    Ok(())
}

/// Closed-form selector update
/// `varphi_j = sigmoid(Omega_j / W_j)` with
/// `Omega_j = sum_n w_nj (sum_k phi_nk ln beta_kj - ln pi_j + ln p - ln(1 - p))`
/// and `W_j` the corpus count of word `j`. Unseen words keep their value.
pub fn ca_update_varphi(
    corpus: &Corpus,
    params: &ModelParams,
    state: &mut VariationalState,
    config: &ModelConfig,
) -> Result<()> {
    ensure!(
        config.channel_enabled,
        "selector update needs the channel enabled"
    );
    config.validate_channel()?;
    let v = corpus.vocab_size();
    let log_beta = params.log_beta();
    let log_pi = params.log_pi();
    let prior = config.p.ln() - (-config.p).ln_1p();
    let mut omega = vec![0.0; v];
    let mut weight = vec![0.0; v];
    for (d, doc) in corpus.documents().iter().enumerate() {
        let phi = &state.phi[d];
        for (row, &(w, c)) in doc.entries().iter().enumerate() {
            let c = c as f64;
            let expected: f64 = (0..config.k)
                .map(|j| phi[[row, j]] * log_beta[[j, w]])
                .sum();
            omega[w] += c * (expected - log_pi[w] + prior);
            weight[w] += c;
        }
    }
    for w in 0..v {
        if weight[w] > 0.0 {
            state.varphi_logits[w] = omega[w] / weight[w];
        }
    }
    Ok(())
}

/// LDA-style responsibilities with topics raised to the selector:
/// `phi_nk ∝ beta_kv^{varphi_v} exp(E[log theta_k])`.
pub fn ca_update_phi(
    corpus: &Corpus,
    d: usize,
    params: &ModelParams,
    state: &mut VariationalState,
    config: &ModelConfig,
) -> Result<()> {
    ensure!(
        d < corpus.len() && d < state.num_documents(),
        "document {d} out of range"
    );
    let log_beta = params.log_beta();
    ca_update_phi_with(corpus, d, &log_beta, state, config);
    Ok(())
}

fn ca_update_phi_with(
    corpus: &Corpus,
    d: usize,
    log_beta: &Array2<f64>,
    state: &mut VariationalState,
    config: &ModelConfig,
) {
    state.phi[d] = optimal_phi(
        &corpus.documents()[d],
        state.gamma.row(d),
        log_beta.view(),
        state.varphi_logits.view(),
        config.channel_enabled,
    );
}

/// Terms of one document's ELBO that depend on `gamma`, given expected
/// topic counts `n_topic`:
/// `sum_k (alpha_k + n_k - gamma_k) E[log theta_k] - lnG(gamma_0) + sum_k lnG(gamma_k)`
/// plus the expected target log-likelihood.
struct GammaObjective<'a> {
    alpha: &'a [f64],
    n_topic: Array1<f64>,
    y: f64,
    eta: ArrayView1<'a, f64>,
    log_delta: f64,
    target_type: TargetType,
}

impl GammaObjective<'_> {
    fn value(&self, gamma: &Array1<f64>) -> f64 {
        let g0 = gamma.sum();
        let dg0 = digamma(g0);
        let mut total = -ln_gamma(g0);
        for k in 0..gamma.len() {
            total += (self.alpha[k] + self.n_topic[k] - gamma[k]) * (digamma(gamma[k]) - dg0)
                + ln_gamma(gamma[k]);
        }
        total
            + target_term(
                self.y,
                gamma.view(),
                self.eta,
                self.log_delta,
                self.target_type,
            )
            .value
    }

    /// Gradient with respect to `ln gamma`.
    fn log_gradient(&self, gamma: &Array1<f64>) -> Array1<f64> {
        let k = gamma.len();
        let g0 = gamma.sum();
        let resid: f64 = (0..k)
            .map(|j| self.alpha[j] + self.n_topic[j] - gamma[j])
            .sum();
        let tg0 = trigamma(g0);
        let target = target_term(
            self.y,
            gamma.view(),
            self.eta,
            self.log_delta,
            self.target_type,
        );
        Array1::from_shape_fn(k, |i| {
            let lda =
                trigamma(gamma[i]) * (self.alpha[i] + self.n_topic[i] - gamma[i]) - tg0 * resid;
            gamma[i] * (lda + target.d_gamma[i])
        })
    }
}

/// Ascent on one document's `gamma` in log coordinates.
///
/// The LDA stationary point `alpha + sum_n phi_n` is tried first and kept
/// only if it raises the objective. Then `steps` gradient steps follow,
/// each halving its step size (up to ten times) until the objective does
/// not decrease; a step that never succeeds is skipped. The document ELBO
/// therefore never decreases.
pub fn ca_update_gamma(
    corpus: &Corpus,
    d: usize,
    params: &ModelParams,
    state: &mut VariationalState,
    config: &ModelConfig,
    steps: usize,
    step_size: f64,
) -> Result<()> {
    ensure!(
        d < corpus.len() && d < state.num_documents(),
        "document {d} out of range"
    );
    ensure!(step_size > 0.0, "gamma step size must be positive");
    let doc = &corpus.documents()[d];
    let k = config.k;
    let mut n_topic = Array1::<f64>::zeros(k);
    for (row, &(_, c)) in doc.entries().iter().enumerate() {
        n_topic.scaled_add(c as f64, &state.phi[d].row(row));
    }
    let obj = GammaObjective {
        alpha: &config.alpha,
        n_topic,
        y: corpus.targets()[d],
        eta: params.eta.view(),
        log_delta: params.log_delta,
        target_type: config.target_type,
    };

    let mut gamma = state.gamma.row(d).to_owned();
    let mut value = obj.value(&gamma);
    let lda_point = Array1::from_shape_fn(k, |j| config.alpha[j] + obj.n_topic[j]);
    let lda_value = obj.value(&lda_point);
    if lda_value.is_finite() && (lda_value > value || !value.is_finite()) {
        gamma = lda_point;
        value = lda_value;
    }

    for _ in 0..steps {
        let grad = obj.log_gradient(&gamma);
        if grad.iter().all(|g| g.abs() < 1e-12) {
            break;
        }
        let mut eta = step_size;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = Array1::from_shape_fn(k, |j| (gamma[j].ln() + eta * grad[j]).exp());
            let cand_value = if candidate.iter().all(|g| *g > 0.0 && g.is_finite()) {
                obj.value(&candidate)
            } else {
                f64::NAN
            };
            if cand_value.is_finite() && cand_value >= value {
                gamma = candidate;
                value = cand_value;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    state.gamma.row_mut(d).assign(&gamma);
    Ok(())
}

/// `pi_j ∝ (1 - varphi_j) * sum_n w_nj`.
pub fn ca_update_pi(
    corpus: &Corpus,
    params: &mut ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<()> {
    ensure!(
        config.channel_enabled,
        "additional-topic update needs the channel enabled"
    );
    let counts = corpus.word_counts();
    let weights = Array1::from_shape_fn(counts.len(), |w| {
        sigmoid(-state.varphi_logits[w]) * counts[w] as f64
    });
    let total = weights.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "every observed word is fully relevant; the additional topic is undefined".into(),
        ));
    }
    params.set_pi(&(weights / total), SIMPLEX_FLOOR);
    Ok(())
}

/// `beta_kj ∝ sum_n varphi_j phi_nk w_nj`. Topics with no weight keep
/// their current row.
pub fn ca_update_beta(
    corpus: &Corpus,
    params: &mut ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<()> {
    let k = config.k;
    let v = corpus.vocab_size();
    let mut weights = Array2::<f64>::zeros((k, v));
    for (d, doc) in corpus.documents().iter().enumerate() {
        let phi = &state.phi[d];
        for (row, &(w, c)) in doc.entries().iter().enumerate() {
            let s = if config.channel_enabled {
                sigmoid(state.varphi_logits[w])
            } else {
                1.0
            };
            for j in 0..k {
                weights[[j, w]] += c as f64 * s * phi[[row, j]];
            }
        }
    }
    let current = params.beta();
    for j in 0..k {
        let total = weights.row(j).sum();
        if total > 0.0 {
            weights.row_mut(j).mapv_inplace(|x| x / total);
        } else {
            weights.row_mut(j).assign(&current.row(j));
        }
    }
    params.set_beta(&weights, SIMPLEX_FLOOR);
    Ok(())
}

/// Gaussian GLM update: `eta` solves
/// `(sum_d E[theta_d theta_d'] + 1e-6 I) eta = sum_d y_d E[theta_d]` and
/// `delta` is the mean expected squared residual, floored at `1e-6`.
pub fn ca_update_eta_delta(
    corpus: &Corpus,
    params: &mut ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<()> {
    ensure!(
        config.target_type == TargetType::Real,
        "closed-form GLM update is only defined for real targets"
    );
    ensure!(!corpus.is_empty(), "corpus is empty");
    let k = config.k;
    let mut gram = Array2::<f64>::eye(k) * ETA_RIDGE;
    let mut rhs = Array1::<f64>::zeros(k);
    let mut means = Vec::with_capacity(corpus.len());
    let mut outers = Vec::with_capacity(corpus.len());
    for (d, &y) in corpus.targets().iter().enumerate() {
        let mean = expected_theta(state.gamma.row(d))?;
        let outer = expected_theta_outer(state.gamma.row(d))?;
        gram += &outer;
        rhs.scaled_add(y, &mean);
        means.push(mean);
        outers.push(outer);
    }
    let eta = solve_dense(
        gram.as_slice().expect("contiguous"),
        rhs.as_slice().expect("contiguous"),
    )
    .map(Array1::from)
    .ok_or_else(|| Error::Degenerate("singular topic moment matrix".into()))?;
    let mut resid = 0.0;
    for ((y, mean), outer) in corpus.targets().iter().zip(&means).zip(&outers) {
        resid += y * y - 2.0 * y * eta.dot(mean) + eta.dot(&outer.dot(&eta));
    }
    let delta = (resid / corpus.len() as f64).max(DELTA_FLOOR);
    params.eta = eta;
    params.log_delta = delta.ln();
    Ok(())
}

/// Fits the model with closed-form coordinate-ascent sweeps: per
/// document `phi` then `gamma`, then the selector, then `pi`, `beta` and
/// the GLM. Real targets only.
pub fn train_coordinate_ascent(
    train: &Corpus,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, VariationalState, TrainTrace)> {
    model_config.validate_channel()?;
    train_config.validate()?;
    ensure!(!train.is_empty(), "training corpus is empty");
    ensure!(
        model_config.target_type == TargetType::Real,
        "coordinate ascent supports real targets only; use the sgd trainer for binary targets"
    );
    let tc = train_config;
    let (mut params, mut state) = init_params(model_config, train, tc.seed)?;
    let mut trace = TrainTrace::default();
    let mut prev = corpus_elbo(train, &params, &state, model_config)?.total;

    for sweep in 1..=tc.ca_sweeps {
        let log_beta = params.log_beta();
        for d in 0..train.len() {
            ca_update_phi_with(train, d, &log_beta, &mut state, model_config);
            ca_update_gamma(
                train,
                d,
                &params,
                &mut state,
                model_config,
                tc.gamma_steps,
                tc.gamma_step_size,
            )?;
        }
        if model_config.channel_enabled {
            ca_update_varphi(train, &params, &mut state, model_config)?;
            ca_update_pi(train, &mut params, &state, model_config)?;
        }
        ca_update_beta(train, &mut params, &state, model_config)?;
        ca_update_eta_delta(train, &mut params, &state, model_config)?;

        let elbo = corpus_elbo(train, &params, &state, model_config)?.total;
        if !elbo.is_finite() {
            return Err(Error::Degenerate(format!(
                "ELBO became {elbo} in sweep {sweep}"
            )));
        }
        let done = relative_change(prev, elbo) < tc.convergence_tol;
        if sweep % tc.log_every == 0 || done || sweep == tc.ca_sweeps {
            trace.push(TraceRecord {
                step: sweep,
                elbo,
                val_metric: None,
            });
        }
        prev = elbo;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok((params, state, trace))
}

/// Dispatches on `train_config.trainer`. The coordinate-ascent trainer
/// ignores `val` and only handles real targets; binary targets go to SGD.
pub fn train(
    train: &Corpus,
    val: Option<&Corpus>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, VariationalState, TrainTrace)> {
    match train_config.trainer {
        TrainerKind::Sgd => train_sgd(train, val, model_config, train_config),
        TrainerKind::Ca if model_config.target_type == TargetType::Binary => {
            train_sgd(train, val, model_config, train_config)
        }
        TrainerKind::Ca => train_coordinate_ascent(train, model_config, train_config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Vocab};
    use crate::elbo::compute_elbo;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adam_isolates_coordinates() {
        let adam = Adam::from_config(&TrainConfig::default());
        let mut st = AdamState::new(3);
        let mut x = [1.0, 2.0, 3.0];
        st.ascend(&adam, &mut x, &[0.0, 5.0, 0.0]);
        assert_eq!(x[0], 1.0);
        assert_eq!(x[2], 3.0);
        // first step moves by lr times the sign
        assert_abs_diff_eq!(x[1], 2.025, epsilon = 1e-9);
    }

    #[test]
    fn trace_csv() {
        let mut t = TrainTrace::default();
        t.push(TraceRecord {
            step: 10,
            elbo: -5.5,
            val_metric: None,
        });
        t.push(TraceRecord {
            step: 20,
            elbo: -4.0,
            val_metric: Some(0.25),
        });
        assert_eq!(t.to_csv(), "step,elbo,val_metric\n10,-5.5,\n20,-4,0.25\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("ca".parse::<TrainerKind>().unwrap(), TrainerKind::Ca);
        assert!("adam".parse::<TrainerKind>().is_err());
    }

    fn counts_corpus(counts: &[u32]) -> Corpus {
        let doc = Document::from_counts(counts.iter().enumerate().map(|(w, c)| (w, *c)));
        Corpus::new(
            Vocab::synthetic(counts.len()).unwrap(),
            vec![doc],
            vec![0.5],
            TargetType::Real,
        )
        .unwrap()
    }

    #[test]
    fn pi_from_counts() {
        let corpus = counts_corpus(&[2, 6, 2]);
        let config = ModelConfig::new(2, 0.5, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 1).unwrap();
        state.varphi_logits.fill(-1e3);
        ca_update_pi(&corpus, &mut params, &state, &config).unwrap();
        let pi = params.pi();
        for (a, b) in pi.iter().zip([0.2, 0.6, 0.2]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        state.varphi_logits[1] = 1e3;
        ca_update_pi(&corpus, &mut params, &state, &config).unwrap();
        assert!(params.pi()[1] < 1e-11);
        state.varphi_logits.fill(1e3);
        assert!(ca_update_pi(&corpus, &mut params, &state, &config).is_err());
    }

    #[test]
    fn beta_unigram_collapse() {
        let corpus = counts_corpus(&[1, 3, 4]);
        let config = ModelConfig::slda(1, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 1).unwrap();
        ca_update_phi(&corpus, 0, &params, &mut state, &config).unwrap();
        ca_update_beta(&corpus, &mut params, &state, &config).unwrap();
        for (a, b) in params.beta().iter().zip([0.125, 0.375, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn excluded_word_leaves_topics() {
        let corpus = counts_corpus(&[3, 3, 3]);
        let config = ModelConfig::new(2, 0.5, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 2).unwrap();
        state.varphi_logits[0] = -1e3;
        ca_update_beta(&corpus, &mut params, &state, &config).unwrap();
        let beta = params.beta();
        assert!(beta.column(0).iter().all(|b| *b < 1e-11));
    }

    #[test]
    fn symmetric_evidence_gives_half() {
        let corpus = counts_corpus(&[2, 1]);
        let config = ModelConfig::new(1, 0.5, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 3).unwrap();
        let b = params.beta();
        params.set_pi(&b.row(0).to_owned(), 0.0);
        ca_update_varphi(&corpus, &params, &mut state, &config).unwrap();
        for s in state.varphi().iter() {
            assert_abs_diff_eq!(*s, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn lda_fixed_point_without_targets() {
        let corpus = counts_corpus(&[4, 0, 2, 5]);
        let mut corpus = corpus;
        corpus = corpus.with_targets(vec![0.0], TargetType::Real).unwrap();
        let config = ModelConfig::new(3, 0.4, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 4).unwrap();
        params.eta.fill(0.0);
        ca_update_phi(&corpus, 0, &params, &mut state, &config).unwrap();
        ca_update_gamma(&corpus, 0, &params, &mut state, &config, 25, 0.5).unwrap();
        let phi = &state.phi[0];
        let doc = &corpus.documents()[0];
        for j in 0..3 {
            let n: f64 = doc
                .entries()
                .iter()
                .enumerate()
                .map(|(r, (_, c))| *c as f64 * phi[[r, j]])
                .sum();
            assert_abs_diff_eq!(state.gamma[[0, j]], 1.0 + n, epsilon = 1e-9);
        }
    }

    #[test]
    fn eta_delta_constant_target_collapse() {
        let docs = vec![Document::from_counts([(0, 3)]); 4];
        let corpus = Corpus::new(
            Vocab::synthetic(2).unwrap(),
            docs,
            vec![1.5; 4],
            TargetType::Real,
        )
        .unwrap();
        let config = ModelConfig::new(2, 0.5, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 5).unwrap();
        // nearly degenerate theta at e_1
        state.gamma.column_mut(0).fill(1e9);
        state.gamma.column_mut(1).fill(1e-9);
        ca_update_eta_delta(&corpus, &mut params, &state, &config).unwrap();
        assert_abs_diff_eq!(params.eta[0], 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(params.delta(), 1e-6, epsilon = 1e-9);

        let mut binary = config.clone();
        binary.target_type = TargetType::Binary;
        assert!(ca_update_eta_delta(&corpus, &mut params, &state, &binary).is_err());
    }

    #[test]
    fn single_topic_baseline_converges_fast() {
        let docs = vec![
            Document::from_counts([(0, 2), (1, 1)]),
            Document::from_counts([(1, 3), (2, 2)]),
            Document::from_counts([(0, 1), (2, 1)]),
        ];
        let corpus = Corpus::new(
            Vocab::synthetic(3).unwrap(),
            docs,
            vec![0.1, -0.4, 1.0],
            TargetType::Real,
        )
        .unwrap();
        let config = ModelConfig::slda(1, TargetType::Real);
        let (params, _, trace) =
            train_coordinate_ascent(&corpus, &config, &TrainConfig::default()).unwrap();
        assert!(trace.converged);
        assert!(trace.records.len() <= 3, "{:?}", trace.records);
        for (a, b) in params.beta().iter().zip([0.3, 0.4, 0.3]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn gamma_update_never_lowers_elbo() {
        let docs = vec![
            Document::from_counts([(0, 4), (2, 1), (3, 2)]),
            Document::from_counts([(1, 3)]),
        ];
        let corpus = Corpus::new(
            Vocab::synthetic(4).unwrap(),
            docs,
            vec![2.0, -1.0],
            TargetType::Real,
        )
        .unwrap();
        let config = ModelConfig::new(3, 0.3, TargetType::Real);
        let (mut params, mut state) = init_params(&config, &corpus, 6).unwrap();
        params.eta = Array1::from(vec![3.0, -2.0, 0.5]);
        for d in 0..2 {
            let before = compute_elbo(&corpus, &[0, 1], &params, &state, &config)
                .unwrap()
                .total;
            ca_update_gamma(&corpus, d, &params, &mut state, &config, 25, 0.5).unwrap();
            let after = compute_elbo(&corpus, &[0, 1], &params, &state, &config)
                .unwrap()
                .total;
            assert!(after >= before - 1e-8, "{before} -> {after}");
        }
    }
}
