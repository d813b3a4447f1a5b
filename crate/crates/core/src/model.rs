//! Model parameters, variational state and checkpoint files.
//!
//! All constrained quantities are stored in unconstrained coordinates:
//! topic rows and the additional topic as softmax logits, the feature
//! selector as sigmoid logits, the Gaussian noise variance as a log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::corpus::{Corpus, TargetType};
use crate::error::{ensure, Error, Result};
use crate::special::{digamma, log_softmax, sigmoid, softmax};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub k: usize,
    /// Prior probability that a token comes from the relevant channel.
    pub p: f64,
    pub target_type: TargetType,
    pub alpha: Vec<f64>,
    pub seed: u64,
    /// `false` gives the plain sLDA baseline: every word is relevant and
    /// the additional topic is unused.
    pub channel_enabled: bool,
}

impl ModelConfig {
    pub fn new(k: usize, p: f64, target_type: TargetType) -> Self {
        ModelConfig {
            k,
            p,
            target_type,
            alpha: vec![1.0; k],
            seed: 0,
            channel_enabled: true,
        }
    }

    /// sLDA baseline configuration.
    pub fn slda(k: usize, target_type: TargetType) -> Self {
        ModelConfig {
            channel_enabled: false,
            ..ModelConfig::new(k, 1.0, target_type)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, "number of topics must be at least 1");
        ensure!(
            self.p > 0.0 && self.p <= 1.0,
            "word inclusion prior p must lie in (0, 1], got {}",
            self.p
        );
        ensure!(
            self.alpha.len() == self.k,
            "alpha has {} entries for {} topics",
            self.alpha.len(),
            self.k
        );
        ensure!(
            self.alpha.iter().all(|a| *a > 0.0 && a.is_finite()),
            "alpha entries must be positive"
        );
        Ok(())
    }

    /// The two-channel objective needs `log p` and `log(1 - p)` to be finite.
    pub fn validate_channel(&self) -> Result<()> {
        self.validate()?;
        if self.channel_enabled {
            ensure!(
                self.p > 0.0 && self.p < 1.0,
                "channel model requires 0 < p < 1, got {}",
                self.p
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `K x V`; topic `k` is `softmax(beta_logits[k])`.
    pub beta_logits: Array2<f64>,
    pub pi_logits: Array1<f64>,
    pub eta: Array1<f64>,
    pub log_delta: f64,
    pub p: f64,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.beta_logits.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta_logits.ncols()
    }

    pub fn beta(&self) -> Array2<f64> {
        let mut out = self.beta_logits.clone();
        for mut row in out.rows_mut() {
            softmax_row(row.as_slice_mut().expect("contiguous row"));
        }
        out
    }

    pub fn log_beta(&self) -> Array2<f64> {
        let mut out = self.beta_logits.clone();
        for mut row in out.rows_mut() {
            let lr = log_softmax(row.as_slice().expect("contiguous row"));
            row.assign(&ArrayView1::from(&lr));
        }
        out
    }

    pub fn pi(&self) -> Array1<f64> {
        Array1::from(softmax(self.pi_logits.as_slice().expect("contiguous")))
    }

    pub fn log_pi(&self) -> Array1<f64> {
        Array1::from(log_softmax(self.pi_logits.as_slice().expect("contiguous")))
    }

    pub fn delta(&self) -> f64 {
        self.log_delta.exp()
    }

    /// Sets topic rows from probabilities. Entries are floored at `floor`
    /// and renormalized so the logits stay finite.
    pub fn set_beta(&mut self, beta: &Array2<f64>, floor: f64) {
        for (mut dst, src) in self.beta_logits.rows_mut().into_iter().zip(beta.rows()) {
            let logs = floored_log_simplex(src.as_slice().expect("contiguous"), floor);
            dst.assign(&Array1::from(logs));
        }
    }

    pub fn set_pi(&mut self, pi: &Array1<f64>, floor: f64) {
        self.pi_logits = Array1::from(floored_log_simplex(
            pi.as_slice().expect("contiguous"),
            floor,
        ));
    }
}

fn softmax_row(row: &mut [f64]) {
    crate::special::softmax_in_place(row);
}

fn floored_log_simplex(probs: &[f64], floor: f64) -> Vec<f64> {
    let total: f64 = probs.iter().map(|x| x.max(floor)).sum();
    probs.iter().map(|x| (x.max(floor) / total).ln()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// `M x K` Dirichlet parameters.
    pub gamma: Array2<f64>,
    /// Per document, one row per distinct word (in the document's entry
    /// order) holding that word's topic responsibilities.
    pub phi: Vec<Array2<f64>>,
    /// Feature-selector logits; `sigmoid(varphi_logits[v])` is the
    /// probability that word `v` is relevant.
    pub varphi_logits: Array1<f64>,
}

impl VariationalState {
    pub fn num_documents(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn varphi(&self) -> Array1<f64> {
        self.varphi_logits.mapv(sigmoid)
    }

    /// Fresh per-document state for `corpus` that reuses the global
    /// selector; used when scoring held-out documents.
    pub fn for_corpus(corpus: &Corpus, config: &ModelConfig, varphi_logits: Array1<f64>) -> Self {
        let k = config.k;
        let m = corpus.len();
        let mut gamma = Array2::zeros((m, k));
        let mut phi = Vec::with_capacity(m);
        for (d, doc) in corpus.documents().iter().enumerate() {
            let n = doc.total_tokens() as f64;
            for j in 0..k {
                gamma[[d, j]] = config.alpha[j] + n / k as f64;
            }
            phi.push(Array2::from_elem((doc.distinct(), k), 1.0 / k as f64));
        }
        VariationalState {
            gamma,
            phi,
            varphi_logits,
        }
    }
}

/// Draws starting values for every parameter.
///
/// Topic and additional-topic logits are `ln(1 + e)` with `e ~ Exp(1)`;
/// GLM weights are `N(0, 0.1^2)`; `log_delta = 0`; each document starts
/// at `gamma_dk = alpha_k + N_d / K` with uniform responsibilities and
/// every selector at one half.
pub fn init_params(
    config: &ModelConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<(ModelParams, VariationalState)> {
    config.validate()?;
    let v = corpus.vocab_size();
    ensure!(v >= 1, "vocabulary must be nonempty");
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || {
        let e: f64 = Exp1.sample(&mut rng);
        e.ln_1p()
    };
    let beta_logits = Array2::from_shape_simple_fn((k, v), &mut noise);
    let pi_logits = Array1::from_shape_simple_fn(v, &mut noise);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let eta = Array1::from_shape_simple_fn(k, || normal.sample(&mut rng));
    let params = ModelParams {
        beta_logits,
        pi_logits,
        eta,
        log_delta: 0.0,
        p: config.p,
    };
    let state = VariationalState::for_corpus(corpus, config, Array1::zeros(v));
    Ok((params, state))
}

fn check_gamma(gamma: ArrayView1<f64>) -> Result<()> {
    ensure!(!gamma.is_empty(), "gamma must be nonempty");
    ensure!(
        gamma.iter().all(|g| *g > 0.0 && g.is_finite()),
        "gamma entries must be positive and finite"
    );
    Ok(())
}

/// `E[log theta_k] = psi(gamma_k) - psi(sum gamma)` under `Dir(gamma)`.
pub fn expected_log_theta(gamma: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_gamma(gamma)?;
    Ok(expected_log_theta_unchecked(gamma))
}

pub(crate) fn expected_log_theta_unchecked(gamma: ArrayView1<f64>) -> Array1<f64> {
    let psi_total = digamma(gamma.sum());
    gamma.mapv(|g| digamma(g) - psi_total)
}

pub fn expected_theta(gamma: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_gamma(gamma)?;
    let total = gamma.sum();
    Ok(gamma.mapv(|g| g / total))
}

/// Second moments `E[theta theta^T]` under `Dir(gamma)`.
pub fn expected_theta_outer(gamma: ArrayView1<f64>) -> Result<Array2<f64>> {
    check_gamma(gamma)?;
    let g0 = gamma.sum();
    let mean = gamma.mapv(|g| g / g0);
    let k = gamma.len();
    Ok(Array2::from_shape_fn((k, k), |(i, j)| {
        let kron = if i == j { 1.0 } else { 0.0 };
        mean[i] * (kron - mean[j]) / (g0 + 1.0) + mean[i] * mean[j]
    }))
}

const CHECKPOINT_MAGIC: &str = "pfslda-model v1";

/// Everything needed to score new documents: the configuration header,
/// the model parameters and the global feature selector.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub varphi_logits: Array1<f64>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, state: &VariationalState) -> Self {
        Checkpoint {
            config,
            params,
            varphi_logits: state.varphi_logits.clone(),
        }
    }

    pub fn varphi(&self) -> Array1<f64> {
        self.varphi_logits.mapv(sigmoid)
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(
            out,
            "K={} V={} p={} target_type={} channel={}",
            p.k(),
            p.vocab_size(),
            fmt_f64(self.config.p),
            self.config.target_type,
            u8::from(self.config.channel_enabled)
        )
        .unwrap();
        writeln!(out, "BETA_LOGITS").unwrap();
        for row in p.beta_logits.rows() {
            writeln!(out, "{}", format_row(row.iter().copied())).unwrap();
        }
        write_block(&mut out, "PI_LOGITS", p.pi_logits.iter().copied());
        write_block(&mut out, "ETA", p.eta.iter().copied());
        write_block(&mut out, "LOG_DELTA", std::iter::once(p.log_delta));
        write_block(
            &mut out,
            "VARPHI_LOGITS",
            self.varphi_logits.iter().copied(),
        );
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text).map_err(|(line, msg)| Error::parse(path, line, msg))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lines = BlockReader::new(text);
        let (n, magic) = lines.next_line()?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err((n, format!("expected header '{CHECKPOINT_MAGIC}'")));
        }
        let (n, header) = lines.next_line()?;
        let mut k = None;
        let mut v = None;
        let mut p = None;
        let mut target_type = None;
        let mut channel = None;
        for field in header.split_whitespace() {
            let (key, val) = field
                .split_once('=')
                .ok_or((n, format!("malformed header field '{field}'")))?;
            let bad = |_| (n, format!("bad value for {key}: '{val}'"));
            match key {
                "K" => {
                    k = Some(
                        val.parse::<usize>()
                            .map_err(|_| (n, format!("bad K '{val}'")))?,
                    )
                }
                "V" => {
                    v = Some(
                        val.parse::<usize>()
                            .map_err(|_| (n, format!("bad V '{val}'")))?,
                    )
                }
                "p" => {
                    p = Some(
                        val.parse::<f64>()
                            .map_err(|_| (n, format!("bad p '{val}'")))?,
                    )
                }
                "target_type" => target_type = Some(val.parse::<TargetType>().map_err(bad)?),
                "channel" => {
                    channel = Some(match val {
                        "0" => false,
                        "1" => true,
                        _ => return Err((n, format!("bad channel '{val}'"))),
                    })
                }
                _ => return Err((n, format!("unknown header field '{key}'"))),
            }
        }
        let missing = |name: &str| (n, format!("header is missing {name}"));
        let k = k.ok_or_else(|| missing("K"))?;
        let v = v.ok_or_else(|| missing("V"))?;
        let p = p.ok_or_else(|| missing("p"))?;
        let target_type = target_type.ok_or_else(|| missing("target_type"))?;
        let channel_enabled = channel.ok_or_else(|| missing("channel"))?;

        let beta_rows = lines.block("BETA_LOGITS", k, v)?;
        let beta_logits =
            Array2::from_shape_vec((k, v), beta_rows.concat()).map_err(|e| (n, e.to_string()))?;
        let pi_logits = Array1::from(lines.block("PI_LOGITS", 1, v)?.remove(0));
        let eta = Array1::from(lines.block("ETA", 1, k)?.remove(0));
        let log_delta = lines.block("LOG_DELTA", 1, 1)?[0][0];
        let varphi_logits = Array1::from(lines.block("VARPHI_LOGITS", 1, v)?.remove(0));

        let config = ModelConfig {
            k,
            p,
            target_type,
            alpha: vec![1.0; k],
            seed: 0,
            channel_enabled,
        };
        config.validate().map_err(|e| (2, e.to_string()))?;
        Ok(Checkpoint {
            config,
            params: ModelParams {
                beta_logits,
                pi_logits,
                eta,
                log_delta,
                p,
            },
            varphi_logits,
        })
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

pub(crate) fn format_row<I: IntoIterator<Item = f64>>(values: I) -> String {
    values
        .into_iter()
        .map(fmt_f64)
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn write_block<I: IntoIterator<Item = f64>>(out: &mut String, name: &str, values: I) {
    writeln!(out, "{name}").unwrap();
    writeln!(out, "{}", format_row(values)).unwrap();
}

/// Line cursor over the named-block text format shared by checkpoints and
/// synthetic truth files. Errors carry 1-based line numbers.
pub(crate) struct BlockReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> BlockReader<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        BlockReader {
            lines: text.lines().enumerate(),
        }
    }

    pub(crate) fn next_line(&mut self) -> std::result::Result<(usize, &'a str), (usize, String)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or((0, "unexpected end of file".to_string()))
    }

    pub(crate) fn block(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> std::result::Result<Vec<Vec<f64>>, (usize, String)> {
        let (n, header) = self.next_line()?;
        if header.trim() != name {
            return Err((
                n,
                format!("expected block '{name}', found '{}'", header.trim()),
            ));
        }
        (0..rows)
            .map(|_| {
                let (n, line) = self.next_line()?;
                let row = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| (n, format!("bad number '{t}'")))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                if row.len() != cols {
                    return Err((
                        n,
                        format!("{name}: expected {cols} values, found {}", row.len()),
                    ));
                }
                Ok(row)
            })
            .collect()
    }
}

/// Row sums of a matrix, used by invariant checks.
pub fn row_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(1))
}
