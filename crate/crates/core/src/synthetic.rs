//! Corpora drawn from the two-channel generative process with known
//! ground truth.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, Document, TargetType, Vocab};
use crate::error::{ensure, Error, Result};
use crate::model::{format_row, write_block, BlockReader};
use crate::special::sample_dirichlet;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    /// The first `relevant_count` words carry the topics; the rest belong
    /// to the additional topic.
    pub relevant_count: usize,
    pub k: usize,
    pub p: f64,
    pub alpha: Vec<f64>,
    pub docs: usize,
    pub doc_length: usize,
    /// `eta` is `k` equally spaced points on `[-eta_spread, eta_spread]`.
    pub eta_spread: f64,
    pub delta: f64,
    pub datasets: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_size: 100,
            relevant_count: 50,
            k: 5,
            p: 0.25,
            alpha: vec![1.0; 5],
            docs: 1000,
            doc_length: 100,
            eta_spread: 2.0,
            delta: 0.5,
            datasets: 5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Defaults with `k` topics and a matching all-ones `alpha`.
    pub fn with_topics(mut self, k: usize) -> Self {
        self.k = k;
        self.alpha = vec![1.0; k];
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.relevant_count >= 1 && self.relevant_count < self.vocab_size,
            "relevant_count must lie in [1, V), got {} with V = {}",
            self.relevant_count,
            self.vocab_size
        );
        ensure!(
            self.p > 0.0 && self.p < 1.0,
            "p must lie in (0, 1), got {}",
            self.p
        );
        ensure!(self.k >= 1, "need at least one topic");
        ensure!(
            self.alpha.len() == self.k,
            "alpha has {} entries for {} topics",
            self.alpha.len(),
            self.k
        );
        ensure!(
            self.alpha.iter().all(|a| *a > 0.0),
            "alpha entries must be positive"
        );
        ensure!(self.delta > 0.0, "delta must be positive");
        ensure!(
            self.docs >= 1 && self.datasets >= 1,
            "need at least one document and dataset"
        );
        Ok(())
    }

    pub fn eta(&self) -> Array1<f64> {
        if self.k == 1 {
            return Array1::zeros(1);
        }
        Array1::linspace(-self.eta_spread, self.eta_spread, self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub beta: Array2<f64>,
    pub pi: Array1<f64>,
    pub eta: Array1<f64>,
    pub delta: f64,
    pub relevance_mask: Vec<bool>,
}

impl SyntheticTruth {
    pub fn relevant_words(&self) -> std::collections::BTreeSet<usize> {
        self.relevance_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
            .collect()
    }

    /// Line 1: relevance mask as 0/1 per word. Then blocks `TRUE_ETA`,
    /// `TRUE_BETA` (one row per topic), `TRUE_PI` and `TRUE_DELTA`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mask: Vec<&str> = self
            .relevance_mask
            .iter()
            .map(|m| if *m { "1" } else { "0" })
            .collect();
        writeln!(out, "{}", mask.join(" ")).unwrap();
        write_block(&mut out, "TRUE_ETA", self.eta.iter().copied());
        writeln!(out, "TRUE_BETA").unwrap();
        for row in self.beta.rows() {
            writeln!(out, "{}", format_row(row.iter().copied())).unwrap();
        }
        write_block(&mut out, "TRUE_PI", self.pi.iter().copied());
        write_block(&mut out, "TRUE_DELTA", [self.delta]);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, msg)| Error::parse(path, line, msg))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut reader = BlockReader::new(text);
        let (n, first) = reader.next_line()?;
        let relevance_mask = first
            .split_whitespace()
            .map(|t| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err((n, format!("mask entries must be 0 or 1, found '{t}'"))),
            })
            .collect::<std::result::Result<Vec<bool>, _>>()?;
        let v = relevance_mask.len();
        if v == 0 {
            return Err((n, "empty relevance mask".into()));
        }
        // the number of weights fixes the number of topics
        let (n, header) = reader.next_line()?;
        if header.trim() != "TRUE_ETA" {
            return Err((
                n,
                format!("expected block 'TRUE_ETA', found '{}'", header.trim()),
            ));
        }
        let (n, eta_line) = reader.next_line()?;
        let eta = eta_line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| (n, format!("bad number '{t}'")))
            })
            .collect::<std::result::Result<Vec<f64>, _>>()?;
        let k = eta.len();
        if k == 0 {
            return Err((n, "TRUE_ETA is empty".into()));
        }
        let beta_rows = reader.block("TRUE_BETA", k, v)?;
        let pi = reader.block("TRUE_PI", 1, v)?.remove(0);
        let delta = reader.block("TRUE_DELTA", 1, 1)?[0][0];
        Ok(SyntheticTruth {
            beta: Array2::from_shape_vec((k, v), beta_rows.concat()).expect("shape checked"),
            pi: Array1::from(pi),
            eta: Array1::from(eta),
            delta,
            relevance_mask,
        })
    }
}

/// Draws dataset `dataset_index` from the generative process, seeded by
/// `config.seed + dataset_index`. Topics are Dirichlet(1) over the
/// relevant words, the additional topic Dirichlet(1) over the others.
pub fn generate_dataset(
    config: &SyntheticConfig,
    dataset_index: usize,
) -> Result<(Corpus, SyntheticTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(dataset_index as u64));
    let v = config.vocab_size;
    let r = config.relevant_count;
    let k = config.k;

    let mut beta = Array2::zeros((k, v));
    for j in 0..k {
        let row = sample_dirichlet(&mut rng, &vec![1.0; r]);
        for (w, b) in row.into_iter().enumerate() {
            beta[[j, w]] = b;
        }
    }
    let mut pi = Array1::zeros(v);
    for (i, x) in sample_dirichlet(&mut rng, &vec![1.0; v - r])
        .into_iter()
        .enumerate()
    {
        pi[r + i] = x;
    }
    let eta = config.eta();
    let truth = SyntheticTruth {
        beta,
        pi,
        eta,
        delta: config.delta,
        relevance_mask: (0..v).map(|w| w < r).collect(),
    };

    let topic_samplers: Vec<WeightedIndex<f64>> = truth
        .beta
        .rows()
        .into_iter()
        .map(|row| WeightedIndex::new(row.iter().copied()).expect("valid topic"))
        .collect();
    let pi_sampler = WeightedIndex::new(truth.pi.iter().copied()).expect("valid additional topic");
    let noise = Normal::new(0.0, config.delta.sqrt()).expect("positive variance");

    let mut docs = Vec::with_capacity(config.docs);
    let mut targets = Vec::with_capacity(config.docs);
    for _ in 0..config.docs {
        let theta = sample_dirichlet(&mut rng, &config.alpha);
        let theta_sampler = WeightedIndex::new(theta.iter().copied()).expect("valid theta");
        let tokens: Vec<usize> = (0..config.doc_length)
            .map(|_| {
                let z = theta_sampler.sample(&mut rng);
                if rng.random_bool(config.p) {
                    topic_samplers[z].sample(&mut rng)
                } else {
                    pi_sampler.sample(&mut rng)
                }
            })
            .collect();
        let mean: f64 = truth.eta.iter().zip(&theta).map(|(e, t)| e * t).sum();
        targets.push(mean + noise.sample(&mut rng));
        docs.push(Document::from_tokens(tokens));
    }
    let corpus = Corpus::new(Vocab::synthetic(v)?, docs, targets, TargetType::Real)?;
    Ok((corpus, truth))
}

/// Fraction of tokens that fall on relevant words.
pub fn empirical_channel_rate(corpus: &Corpus, truth: &SyntheticTruth) -> Result<f64> {
    ensure!(
        truth.relevance_mask.len() == corpus.vocab_size(),
        "truth covers {} words but the corpus has {}",
        truth.relevance_mask.len(),
        corpus.vocab_size()
    );
    let total = corpus.total_tokens();
    ensure!(total > 0, "corpus has no tokens");
    let relevant: u64 = corpus
        .word_counts()
        .iter()
        .zip(&truth.relevance_mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .sum();
    Ok(relevant as f64 / total as f64)
}

/// Writes the corpus files and `truth.txt` into `dir`.
pub fn write_dataset(dir: &Path, corpus: &Corpus, truth: &SyntheticTruth) -> Result<()> {
    corpus.save_dir(dir)?;
    truth.save(&dir.join("truth.txt"))
}
