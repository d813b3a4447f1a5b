//! Evidence lower bound of the two-channel model and its exact gradient in
//! unconstrained coordinates.
//!
//! Per document `d` with distinct words `v` (count `c_v`), responsibilities
//! `phi_vk`, selector `s_v = sigmoid(u_v)` and Dirichlet `gamma_d`:
//!
//! ```text
//! log p(theta)  = lnG(sum a) - sum lnG(a_k) + sum (a_k - 1) E[log theta_k]
//! log p(z)      = sum_v c_v sum_k phi_vk E[log theta_k]
//! log p(w)      = sum_v c_v [ s_v sum_k phi_vk log beta_kv + (1 - s_v) log pi_v ]
//! log p(xi)     = sum_v c_v [ s_v log p + (1 - s_v) log(1 - p) ]
//! log p(y)      = Gaussian or logistic GLM term in E[theta], E[theta theta^T]
//! H(theta)      = -lnG(g0) + sum lnG(g_k) - sum (g_k - 1) E[log theta_k]
//! H(z)          = -sum_v c_v sum_k phi_vk log phi_vk
//! H(xi)         = -sum_v c_v [ s_v log s_v + (1 - s_v) log(1 - s_v) ]
//! ```
//!
//! With the channel disabled every `s_v` is 1, the additional topic drops
//! out and both switch terms vanish.

use std::ops::{Add, AddAssign};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::corpus::{Corpus, Document, TargetType};
use crate::error::{Error, Result};
use crate::model::{expected_log_theta_unchecked, ModelConfig, ModelParams, VariationalState};
use crate::special::{digamma, ln_gamma, log_sigmoid, sigmoid, trigamma, xlogx};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboBreakdown {
    pub log_p_theta: f64,
    pub log_p_z: f64,
    pub log_p_w: f64,
    pub log_p_xi: f64,
    pub log_p_y: f64,
    pub entropy_theta: f64,
    pub entropy_z: f64,
    pub entropy_xi: f64,
    pub total: f64,
}

impl ElboBreakdown {
    /// Model terms plus entropies.
    pub fn sum_of_parts(&self) -> f64 {
        self.log_p_theta
            + self.log_p_z
            + self.log_p_w
            + self.log_p_xi
            + self.log_p_y
            + self.entropy_theta
            + self.entropy_z
            + self.entropy_xi
    }

    fn finish(mut self) -> Self {
        self.total = self.sum_of_parts();
        self
    }

    /// Total without the target term.
    pub fn words_only(&self) -> f64 {
        self.total - self.log_p_y
    }
}

impl Add for ElboBreakdown {
    type Output = ElboBreakdown;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ElboBreakdown {
    fn add_assign(&mut self, r: Self) {
        self.log_p_theta += r.log_p_theta;
        self.log_p_z += r.log_p_z;
        self.log_p_w += r.log_p_w;
        self.log_p_xi += r.log_p_xi;
        self.log_p_y += r.log_p_y;
        self.entropy_theta += r.entropy_theta;
        self.entropy_z += r.entropy_z;
        self.entropy_xi += r.entropy_xi;
        self.total += r.total;
    }
}

/// Gradient of [`ElboBreakdown::total`] over a batch.
///
/// Per-document blocks are aligned with the batch order. `d_log_gamma`
/// is with respect to `ln gamma_dk`; `d_phi_logits` is with respect to
/// softmax logits of each responsibility row, evaluated at `ln phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_beta_logits: Array2<f64>,
    pub d_pi_logits: Array1<f64>,
    pub d_eta: Array1<f64>,
    pub d_log_delta: f64,
    pub d_log_gamma: Vec<Array1<f64>>,
    pub d_varphi_logits: Array1<f64>,
    pub d_phi_logits: Vec<Array2<f64>>,
}

impl GradientBundle {
    pub fn all_finite(&self) -> bool {
        self.d_beta_logits.iter().all(|x| x.is_finite())
            && self.d_pi_logits.iter().all(|x| x.is_finite())
            && self.d_eta.iter().all(|x| x.is_finite())
            && self.d_log_delta.is_finite()
            && self.d_log_gamma.iter().flatten().all(|x| x.is_finite())
            && self.d_varphi_logits.iter().all(|x| x.is_finite())
            && self.d_phi_logits.iter().flatten().all(|x| x.is_finite())
    }
}

/// Quantities shared by every document of one evaluation.
struct Shared<'a> {
    config: &'a ModelConfig,
    params: &'a ModelParams,
    log_beta: Array2<f64>,
    log_pi: Array1<f64>,
    log_p: f64,
    log_1mp: f64,
    prior_norm: f64,
}

impl<'a> Shared<'a> {
    fn new(config: &'a ModelConfig, params: &'a ModelParams) -> Self {
        let (log_p, log_1mp) = if config.channel_enabled {
            (config.p.ln(), (-config.p).ln_1p())
        } else {
            (0.0, 0.0)
        };
        let a0: f64 = config.alpha.iter().sum();
        Shared {
            config,
            params,
            log_beta: params.log_beta(),
            log_pi: params.log_pi(),
            log_p,
            log_1mp,
            prior_norm: ln_gamma(a0) - config.alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>(),
        }
    }

    /// `(s_v, ln s_v, ln(1 - s_v), u_v)` for word `v`.
    fn selector(&self, state: &VariationalState, v: usize) -> (f64, f64, f64, f64) {
        if self.config.channel_enabled {
            let u = state.varphi_logits[v];
            (sigmoid(u), log_sigmoid(u), log_sigmoid(-u), u)
        } else {
            (1.0, 0.0, f64::NEG_INFINITY, f64::INFINITY)
        }
    }
}

/// Running sums for a set of documents.
struct Accum {
    elbo: ElboBreakdown,
    want_grad: bool,
    /// `sum c_v s_v phi_vk`, the gradient w.r.t. `ln beta_kv`.
    beta_weight: Array2<f64>,
    /// `sum c_v (1 - s_v)`, the gradient w.r.t. `ln pi_v`.
    pi_weight: Array1<f64>,
    /// Gradient w.r.t. `s_v` before the sigmoid chain factor.
    d_varphi: Array1<f64>,
    d_eta: Array1<f64>,
    d_log_delta: f64,
    docs: Vec<(usize, Array1<f64>, Array2<f64>)>,
}

impl Accum {
    fn new(k: usize, v: usize, want_grad: bool) -> Self {
        let (gk, gv) = if want_grad { (k, v) } else { (0, 0) };
        Accum {
            elbo: ElboBreakdown::default(),
            want_grad,
            beta_weight: Array2::zeros((gk, gv)),
            pi_weight: Array1::zeros(gv),
            d_varphi: Array1::zeros(gv),
            d_eta: Array1::zeros(gk),
            d_log_delta: 0.0,
            docs: Vec::new(),
        }
    }

    fn merge(mut self, other: Accum) -> Accum {
        self.elbo += other.elbo;
        if self.want_grad {
            self.beta_weight += &other.beta_weight;
            self.pi_weight += &other.pi_weight;
            self.d_varphi += &other.d_varphi;
            self.d_eta += &other.d_eta;
            self.d_log_delta += other.d_log_delta;
            self.docs.extend(other.docs);
        }
        self
    }
}

/// Value and gradients of the expected target log-likelihood for one
/// document.
pub(crate) struct TargetTerm {
    pub value: f64,
    pub d_gamma: Array1<f64>,
    pub d_eta: Array1<f64>,
    pub d_log_delta: f64,
}

/// Expected GLM log-likelihood under `Dir(gamma)`.
///
/// Gaussian: `-1/2 ln(2 pi delta) - (y^2 - 2 y eta'E[theta] + eta'E[theta theta']eta) / (2 delta)`.
///
/// Logistic: second-order expansion of `E[ln sigmoid(s eta'theta)]`,
/// `s = 2y - 1`, around the mean: `ln sigmoid(s m) - g(s m) var / 2` with
/// `g(x) = sigmoid(x) sigmoid(-x)`, `m = eta'E[theta]` and
/// `var = eta'Cov[theta]eta`.
pub(crate) fn target_term(
    y: f64,
    gamma: ArrayView1<f64>,
    eta: ArrayView1<f64>,
    log_delta: f64,
    target_type: TargetType,
) -> TargetTerm {
    let k = gamma.len();
    let g0 = gamma.sum();
    let b = g0 * (g0 + 1.0);
    let eg = eta.dot(&gamma);
    let m = eg / g0;
    let a = eg * eg
        + eta
            .iter()
            .zip(gamma.iter())
            .map(|(e, g)| e * e * g)
            .sum::<f64>();
    let q2 = a / b;
    // d m / d gamma_l and d q2 / d gamma_l
    let dm: Array1<f64> = eta.mapv(|e| (e - m) / g0);
    let dq2: Array1<f64> = eta.mapv(|e| (2.0 * eg * e + e * e - q2 * (2.0 * g0 + 1.0)) / b);
    // E[theta] and E[theta theta'] eta, the eta-derivatives of m and q2 / 2
    let mean = gamma.mapv(|g| g / g0);
    let outer_eta: Array1<f64> =
        Array1::from_shape_fn(k, |i| (gamma[i] * eg + gamma[i] * eta[i]) / b);

    match target_type {
        TargetType::Real => {
            let delta = log_delta.exp();
            let quad = y * y - 2.0 * y * m + q2;
            let value = -0.5 * (2.0 * std::f64::consts::PI * delta).ln() - quad / (2.0 * delta);
            TargetTerm {
                value,
                d_gamma: (&dm * (2.0 * y) - &dq2) / (2.0 * delta),
                d_eta: (&mean * y - &outer_eta) / delta,
                d_log_delta: -0.5 + quad / (2.0 * delta),
            }
        }
        TargetType::Binary => {
            let s = 2.0 * y - 1.0;
            let x = s * m;
            let var = q2 - m * m;
            let g = sigmoid(x) * sigmoid(-x);
            let dg = g * (1.0 - 2.0 * sigmoid(x));
            let value = log_sigmoid(x) - 0.5 * g * var;
            // partials w.r.t. m (holding q2) and q2
            let t_m = s * sigmoid(-x) - 0.5 * s * dg * var + g * m;
            let t_q2 = -0.5 * g;
            TargetTerm {
                value,
                d_gamma: &dm * t_m + &dq2 * t_q2,
                d_eta: &mean * t_m + &outer_eta * (2.0 * t_q2),
                d_log_delta: 0.0,
            }
        }
    }
}

fn check_batch(
    corpus: &Corpus,
    batch: &[usize],
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<()> {
    config.validate_channel()?;
    for &d in batch {
        if d >= corpus.len() || d >= state.gamma.nrows() || d >= state.phi.len() {
            return Err(Error::MissingDocument(d));
        }
        if state.phi[d].nrows() != corpus.documents()[d].distinct()
            || state.phi[d].ncols() != config.k
        {
            return Err(Error::MissingDocument(d));
        }
    }
    if state.gamma.ncols() != config.k || state.varphi_logits.len() != corpus.vocab_size() {
        return Err(Error::InvalidArgument(
            "variational state shape does not match model".into(),
        ));
    }
    Ok(())
}

fn document_terms(
    shared: &Shared<'_>,
    state: &VariationalState,
    d: usize,
    doc: &Document,
    y: f64,
    acc: &mut Accum,
) {
    let config = shared.config;
    let k = config.k;
    let gamma = state.gamma.row(d);
    let phi = &state.phi[d];
    let elog = expected_log_theta_unchecked(gamma);
    let g0 = gamma.sum();

    let mut e = ElboBreakdown {
        log_p_theta: shared.prior_norm
            + config
                .alpha
                .iter()
                .zip(elog.iter())
                .map(|(a, el)| (a - 1.0) * el)
                .sum::<f64>(),
        entropy_theta: -ln_gamma(g0) + gamma.iter().map(|g| ln_gamma(*g)).sum::<f64>()
            - gamma
                .iter()
                .zip(elog.iter())
                .map(|(g, el)| (g - 1.0) * el)
                .sum::<f64>(),
        ..Default::default()
    };

    // expected topic counts n_k
    let mut n_topic = Array1::<f64>::zeros(k);
    let mut d_phi = if acc.want_grad {
        Array2::zeros(phi.dim())
    } else {
        Array2::zeros((0, 0))
    };

    for (row, &(v, c)) in doc.entries().iter().enumerate() {
        let c = c as f64;
        let (s, log_s, log_1ms, u) = shared.selector(state, v);
        let phi_row = phi.row(row);
        let mut weighted_log_beta = 0.0;
        let mut neg_entropy = 0.0;
        for j in 0..k {
            let f = phi_row[j];
            n_topic[j] += c * f;
            weighted_log_beta += f * shared.log_beta[[j, v]];
            neg_entropy += xlogx(f);
        }
        e.log_p_z += c * phi_row.dot(&elog);
        e.entropy_z -= c * neg_entropy;
        if config.channel_enabled {
            e.log_p_w += c * (s * weighted_log_beta + (1.0 - s) * shared.log_pi[v]);
            e.log_p_xi += c * (s * shared.log_p + (1.0 - s) * shared.log_1mp);
            e.entropy_xi -= c * (xlogx_from_log(s, log_s) + xlogx_from_log(1.0 - s, log_1ms));
        } else {
            e.log_p_w += c * weighted_log_beta;
        }

        if acc.want_grad {
            for j in 0..k {
                acc.beta_weight[[j, v]] += c * s * phi_row[j];
            }
            if config.channel_enabled {
                acc.pi_weight[v] += c * (1.0 - s);
                acc.d_varphi[v] +=
                    c * (weighted_log_beta - shared.log_pi[v] + shared.log_p - shared.log_1mp - u);
            }
            // d/d phi_vk = c (E[log theta_k] + s log beta_kv - log phi_vk - 1); the
            // constant drops out under the softmax chain rule.
            let g: Vec<f64> = (0..k)
                .map(|j| {
                    let f = phi_row[j];
                    let lf = if f > 0.0 { f.ln() } else { 0.0 };
                    c * (elog[j] + s * shared.log_beta[[j, v]] - lf)
                })
                .collect();
            let mean_g: f64 = (0..k).map(|j| phi_row[j] * g[j]).sum();
            for j in 0..k {
                d_phi[[row, j]] = phi_row[j] * (g[j] - mean_g);
            }
        }
    }

    let target = target_term(
        y,
        gamma,
        shared.params.eta.view(),
        shared.params.log_delta,
        config.target_type,
    );
    e.log_p_y = target.value;
    acc.elbo += e.finish();

    if acc.want_grad {
        // d/d gamma_i of the Dirichlet and topic-count terms
        let tg0 = trigamma(g0);
        let resid: f64 = (0..k)
            .map(|j| config.alpha[j] + n_topic[j] - gamma[j])
            .sum();
        let d_log_gamma = Array1::from_shape_fn(k, |i| {
            let lda = trigamma(gamma[i]) * (config.alpha[i] + n_topic[i] - gamma[i]) - tg0 * resid;
            gamma[i] * (lda + target.d_gamma[i])
        });
        acc.d_eta += &target.d_eta;
        acc.d_log_delta += target.d_log_delta;
        acc.docs.push((d, d_log_gamma, d_phi));
    }
}

fn xlogx_from_log(x: f64, log_x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * log_x
    }
}

fn evaluate(
    corpus: &Corpus,
    batch: &[usize],
    params: &ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
    want_grad: bool,
    pool: Option<&ThreadPool>,
) -> Result<(ElboBreakdown, Option<GradientBundle>)> {
    check_batch(corpus, batch, state, config)?;
    let shared = Shared::new(config, params);
    let (k, v) = (config.k, corpus.vocab_size());
    let docs = corpus.documents();
    let targets = corpus.targets();

    let run_chunk = |chunk: &[usize]| {
        let mut acc = Accum::new(k, v, want_grad);
        for &d in chunk {
            document_terms(&shared, state, d, &docs[d], targets[d], &mut acc);
        }
        acc
    };

    let acc = match pool {
        Some(pool) if pool.current_num_threads() > 1 && batch.len() > 1 => {
            let chunk = batch.len().div_ceil(pool.current_num_threads() * 4).max(1);
            pool.install(|| {
                batch
                    .par_chunks(chunk)
                    .map(run_chunk)
                    .reduce(|| Accum::new(k, v, want_grad), Accum::merge)
            })
        }
        _ => run_chunk(batch),
    };

    let elbo = acc.elbo;
    if !want_grad {
        return Ok((elbo, None));
    }

    let beta = params.beta();
    let mut d_beta_logits = acc.beta_weight.clone();
    for j in 0..k {
        let row_total = acc.beta_weight.row(j).sum();
        for w in 0..v {
            d_beta_logits[[j, w]] -= beta[[j, w]] * row_total;
        }
    }
    let (d_pi_logits, d_varphi_logits) = if config.channel_enabled {
        let pi = params.pi();
        let total = acc.pi_weight.sum();
        let d_pi = &acc.pi_weight - &(pi * total);
        let d_u = Array1::from_shape_fn(v, |w| {
            let s = sigmoid(state.varphi_logits[w]);
            acc.d_varphi[w] * s * (1.0 - s)
        });
        (d_pi, d_u)
    } else {
        (Array1::zeros(v), Array1::zeros(v))
    };

    let mut per_doc = acc.docs;
    // restore batch order after a parallel reduction
    let position: std::collections::HashMap<usize, usize> =
        batch.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    per_doc.sort_by_key(|(d, _, _)| position[d]);
    let (d_log_gamma, d_phi_logits) = per_doc.into_iter().map(|(_, g, f)| (g, f)).unzip();

    let d_log_delta = if config.target_type == TargetType::Real {
        acc.d_log_delta
    } else {
        0.0
    };
    Ok((
        elbo,
        Some(GradientBundle {
            d_beta_logits,
            d_pi_logits,
            d_eta: acc.d_eta,
            d_log_delta,
            d_log_gamma,
            d_varphi_logits,
            d_phi_logits,
        }),
    ))
}

/// ELBO summed over the documents of `batch` (indices into `corpus` and
/// rows of `state`), using the responsibilities currently held in `state`.
pub fn compute_elbo(
    corpus: &Corpus,
    batch: &[usize],
    params: &ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<ElboBreakdown> {
    Ok(evaluate(corpus, batch, params, state, config, false, None)?.0)
}

/// ELBO over every document of the corpus.
pub fn corpus_elbo(
    corpus: &Corpus,
    params: &ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<ElboBreakdown> {
    let all: Vec<usize> = (0..corpus.len()).collect();
    compute_elbo(corpus, &all, params, state, config)
}

/// Exact gradient of the batch ELBO with responsibilities held fixed.
///
/// When the responsibilities sit at their closed-form optimum this is also
/// the gradient of the ELBO with responsibilities re-optimized, since their
/// own partial derivatives vanish there.
pub fn compute_gradients(
    corpus: &Corpus,
    batch: &[usize],
    params: &ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
) -> Result<GradientBundle> {
    compute_elbo_and_gradients(corpus, batch, params, state, config, None).map(|(_, g)| g)
}

/// Value and gradient in one pass, optionally spreading documents over a
/// worker pool.
pub fn compute_elbo_and_gradients(
    corpus: &Corpus,
    batch: &[usize],
    params: &ModelParams,
    state: &VariationalState,
    config: &ModelConfig,
    pool: Option<&ThreadPool>,
) -> Result<(ElboBreakdown, GradientBundle)> {
    let (elbo, grad) = evaluate(corpus, batch, params, state, config, true, pool)?;
    Ok((elbo, grad.expect("gradient requested")))
}

/// Closed-form optimal responsibilities for one document:
/// `phi_vk ∝ beta_kv^{s_v} exp(E[log theta_k])`.
pub fn optimal_phi(
    doc: &Document,
    gamma: ArrayView1<f64>,
    log_beta: ArrayView2<f64>,
    varphi_logits: ArrayView1<f64>,
    channel_enabled: bool,
) -> Array2<f64> {
    let k = gamma.len();
    let elog = expected_log_theta_unchecked(gamma);
    let mut out = Array2::zeros((doc.distinct(), k));
    for (row, &(v, _)) in doc.entries().iter().enumerate() {
        let s = if channel_enabled {
            sigmoid(varphi_logits[v])
        } else {
            1.0
        };
        let mut logits: Vec<f64> = (0..k).map(|j| s * log_beta[[j, v]] + elog[j]).collect();
        crate::special::softmax_in_place(&mut logits);
        for j in 0..k {
            out[[row, j]] = logits[j];
        }
    }
    out
}

/// Sets the responsibilities of every document in `batch` to their
/// closed-form optimum.
pub fn refresh_phi(
    corpus: &Corpus,
    batch: &[usize],
    params: &ModelParams,
    state: &mut VariationalState,
    config: &ModelConfig,
) {
    let log_beta = params.log_beta();
    for &d in batch {
        state.phi[d] = optimal_phi(
            &corpus.documents()[d],
            state.gamma.row(d),
            log_beta.view(),
            state.varphi_logits.view(),
            config.channel_enabled,
        );
    }
}

/// Flat coordinate view of every quantity the ELBO is differentiated
/// against, in a fixed order: topic logits (row-major), additional-topic
/// logits, GLM weights, `ln delta`, `ln gamma` of each batch document,
/// selector logits and, when `include_phi` is set, responsibility logits
/// (`ln phi`) of each batch document.
#[derive(Debug, Clone)]
pub struct CoordinateLayout {
    pub k: usize,
    pub v: usize,
    pub batch: Vec<usize>,
    pub include_phi: bool,
}

impl CoordinateLayout {
    pub fn new(k: usize, v: usize, batch: Vec<usize>, include_phi: bool) -> Self {
        CoordinateLayout {
            k,
            v,
            batch,
            include_phi,
        }
    }

    pub fn pack(&self, params: &ModelParams, state: &VariationalState) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(params.beta_logits.iter());
        out.extend(params.pi_logits.iter());
        out.extend(params.eta.iter());
        out.push(params.log_delta);
        for &d in &self.batch {
            out.extend(state.gamma.row(d).iter().map(|g| g.ln()));
        }
        out.extend(state.varphi_logits.iter());
        if self.include_phi {
            for &d in &self.batch {
                out.extend(state.phi[d].iter().map(|f| f.ln()));
            }
        }
        out
    }

    pub fn unpack(&self, x: &[f64], params: &mut ModelParams, state: &mut VariationalState) {
        let (k, v) = (self.k, self.v);
        let mut it = x.iter().copied();
        for b in params.beta_logits.iter_mut() {
            *b = it.next().unwrap();
        }
        for b in params.pi_logits.iter_mut() {
            *b = it.next().unwrap();
        }
        for e in params.eta.iter_mut() {
            *e = it.next().unwrap();
        }
        params.log_delta = it.next().unwrap();
        for &d in &self.batch {
            for j in 0..k {
                state.gamma[[d, j]] = it.next().unwrap().exp();
            }
        }
        for w in 0..v {
            state.varphi_logits[w] = it.next().unwrap();
        }
        if self.include_phi {
            for &d in &self.batch {
                for mut row in state.phi[d].rows_mut() {
                    let mut logits: Vec<f64> = (0..k).map(|_| it.next().unwrap()).collect();
                    crate::special::softmax_in_place(&mut logits);
                    row.assign(&ArrayView1::from(&logits));
                }
            }
        }
    }

    pub fn pack_gradient(&self, g: &GradientBundle) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(g.d_beta_logits.iter());
        out.extend(g.d_pi_logits.iter());
        out.extend(g.d_eta.iter());
        out.push(g.d_log_delta);
        for row in &g.d_log_gamma {
            out.extend(row.iter());
        }
        out.extend(g.d_varphi_logits.iter());
        if self.include_phi {
            for block in &g.d_phi_logits {
                out.extend(block.iter());
            }
        }
        out
    }

    /// Human-readable name of coordinate `i`.
    pub fn name(&self, i: usize) -> String {
        let (k, v) = (self.k, self.v);
        let mut i = i;
        if i < k * v {
            return format!("beta_logits[{},{}]", i / v, i % v);
        }
        i -= k * v;
        if i < v {
            return format!("pi_logits[{i}]");
        }
        i -= v;
        if i < k {
            return format!("eta[{i}]");
        }
        i -= k;
        if i == 0 {
            return "log_delta".into();
        }
        i -= 1;
        if i < self.batch.len() * k {
            return format!("log_gamma[doc {}][{}]", self.batch[i / k], i % k);
        }
        i -= self.batch.len() * k;
        if i < v {
            return format!("varphi_logits[{i}]");
        }
        i -= v;
        format!("phi_logits[{i}]")
    }
}

/// Digamma-based `E[log theta]` re-exported for callers that need it next
/// to ELBO evaluations.
pub fn dirichlet_expected_log(gamma: ArrayView1<f64>) -> Array1<f64> {
    let total = digamma(gamma.sum());
    gamma.mapv(|g| digamma(g) - total)
}

/// Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McTerm {
    pub value: f64,
    pub stderr: f64,
}

/// The three pieces of the switch-averaged likelihood bound
/// `E_xi[ln p(y | W1(xi))] + p E_theta[ln p_beta(w | theta)] + (1 - p) ln p_pi(w)`,
/// summed over documents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDiagnostic {
    pub prediction_term: McTerm,
    pub word_term: McTerm,
    pub pi_term: f64,
    /// Set when some word has zero probability under the additional topic,
    /// in which case `pi_term` is negative infinity.
    pub pi_term_infinite: bool,
}

impl BoundDiagnostic {
    pub fn total(&self) -> f64 {
        self.prediction_term.value + self.word_term.value + self.pi_term
    }

    pub fn stderr(&self) -> f64 {
        self.prediction_term.stderr.hypot(self.word_term.stderr)
    }
}

/// Inner sample size for the conditional target likelihood.
const INNER_THETA_SAMPLES: usize = 512;

/// Estimates the switch-averaged bound by sampling switches from
/// `Bern(p)` and proportions from `Dir(alpha)`.
///
/// The target term conditions on the relevant tokens of each switch draw:
/// `ln p(y | W1) = ln E_theta[p(y | theta) p(W1 | theta)] - ln E_theta[p(W1 | theta)]`,
/// both expectations estimated on a shared inner sample.
pub fn switch_bound_diagnostic(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    mc_samples: usize,
    seed: u64,
) -> Result<BoundDiagnostic> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    config.validate()?;
    if !config.channel_enabled || config.p <= 0.0 || config.p >= 1.0 {
        return Err(Error::InvalidArgument(
            "bound diagnostic requires the channel model with 0 < p < 1".into(),
        ));
    }
    if mc_samples < 2 {
        return Err(Error::InvalidArgument(
            "need at least two Monte-Carlo samples".into(),
        ));
    }
    let p = config.p;
    let k = config.k;
    let beta = params.beta();
    let log_pi = params.log_pi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pred = (0.0, 0.0);
    let mut word = (0.0, 0.0);
    let mut pi_term = 0.0;
    let mut pi_infinite = false;

    for (doc, y) in corpus.iter() {
        let tokens = doc.tokens();
        for &w in &tokens {
            let lp = log_pi[w];
            if lp == f64::NEG_INFINITY {
                pi_infinite = true;
            }
            pi_term += (1.0 - p) * lp;
        }

        // E_theta[ln p_beta(w | theta)]
        let token_log_topic = |theta: &[f64], w: usize| -> f64 {
            (0..k).map(|j| theta[j] * beta[[j, w]]).sum::<f64>().ln()
        };
        let draws: Vec<f64> = (0..mc_samples)
            .map(|_| {
                let theta = crate::special::sample_dirichlet(&mut rng, &config.alpha);
                tokens.iter().map(|&w| token_log_topic(&theta, w)).sum()
            })
            .collect();
        let (m, v) = mean_var(&draws);
        word.0 += p * m;
        word.1 += p * p * v / mc_samples as f64;

        // E_xi[ln p(y | W1(xi))]
        let inner: Vec<Vec<f64>> = (0..INNER_THETA_SAMPLES)
            .map(|_| crate::special::sample_dirichlet(&mut rng, &config.alpha))
            .collect();
        let inner_target: Vec<f64> = inner
            .iter()
            .map(|th| {
                crate::oracle::target_log_density(
                    y,
                    th,
                    &params.eta,
                    params.log_delta,
                    config.target_type,
                )
            })
            .collect();
        let inner_tokens: Vec<Vec<f64>> = inner
            .iter()
            .map(|th| tokens.iter().map(|&w| token_log_topic(th, w)).collect())
            .collect();
        let draws: Vec<f64> = (0..mc_samples)
            .map(|_| {
                let switches: Vec<bool> = tokens.iter().map(|_| rng.random_bool(p)).collect();
                let relevant_ll: Vec<f64> = inner_tokens
                    .iter()
                    .map(|lt| {
                        lt.iter()
                            .zip(&switches)
                            .filter(|(_, s)| **s)
                            .map(|(l, _)| *l)
                            .sum()
                    })
                    .collect();
                let joint: Vec<f64> = relevant_ll
                    .iter()
                    .zip(&inner_target)
                    .map(|(a, b)| a + b)
                    .collect();
                crate::special::log_sum_exp(&joint) - crate::special::log_sum_exp(&relevant_ll)
            })
            .collect();
        let (m, v) = mean_var(&draws);
        pred.0 += m;
        pred.1 += v / mc_samples as f64;
    }

    Ok(BoundDiagnostic {
        prediction_term: McTerm {
            value: pred.0,
            stderr: pred.1.sqrt(),
        },
        word_term: McTerm {
            value: word.0,
            stderr: word.1.sqrt(),
        },
        pi_term,
        pi_term_infinite: pi_infinite,
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}
