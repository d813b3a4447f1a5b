//! Test-time inference: MAP topic proportions and GLM predictions.
//!
//! Switches are summed out per token, so each word contributes
//! `ln[p (beta theta)_w + (1 - p) pi_w]`; words owned by the additional
//! topic add a near-constant and do not steer `theta`.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::corpus::{Corpus, Document, TargetType};
use crate::model::{ModelConfig, ModelParams};
use crate::special::{sigmoid, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Stop once the gradient norm (in logit coordinates) drops below this.
    pub tol: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            steps: 200,
            step_size: 0.1,
            tol: 1e-6,
        }
    }
}

/// Per-word probabilities needed by the MAP objective.
pub struct PredictionModel<'a> {
    config: &'a ModelConfig,
    beta: Array2<f64>,
    pi: Array1<f64>,
    eta: Array1<f64>,
}

impl<'a> PredictionModel<'a> {
    pub fn new(params: &ModelParams, config: &'a ModelConfig) -> Self {
        PredictionModel {
            config,
            beta: params.beta(),
            pi: params.pi(),
            eta: params.eta.clone(),
        }
    }

    /// Log posterior of `theta` up to a constant, divided by `max(N_d, 1)`.
    pub fn objective(&self, doc: &Document, theta: &[f64]) -> f64 {
        let prior: f64 = self
            .config
            .alpha
            .iter()
            .zip(theta)
            .map(|(a, t)| if *a == 1.0 { 0.0 } else { (a - 1.0) * t.ln() })
            .sum();
        let words: f64 = doc
            .entries()
            .iter()
            .map(|&(w, c)| c as f64 * self.word_prob(w, theta).ln())
            .sum();
        (prior + words) / scale(doc)
    }

    fn word_prob(&self, w: usize, theta: &[f64]) -> f64 {
        let topic: f64 = theta
            .iter()
            .enumerate()
            .map(|(k, t)| t * self.beta[[k, w]])
            .sum();
        if self.config.channel_enabled {
            self.config.p * topic + (1.0 - self.config.p) * self.pi[w]
        } else {
            topic
        }
    }

    /// Gradient of [`Self::objective`] with respect to the softmax logits.
    fn logit_gradient(&self, doc: &Document, theta: &[f64]) -> Vec<f64> {
        let k = theta.len();
        let weight = if self.config.channel_enabled {
            self.config.p
        } else {
            1.0
        };
        // d/d theta_j of the word terms
        let mut d_theta = vec![0.0; k];
        for &(w, c) in doc.entries() {
            let mix = self.word_prob(w, theta);
            for (j, dt) in d_theta.iter_mut().enumerate() {
                *dt += c as f64 * weight * self.beta[[j, w]] / mix;
            }
        }
        let mean: f64 = theta.iter().zip(&d_theta).map(|(t, d)| t * d).sum();
        let alpha_excess: f64 = self.config.alpha.iter().map(|a| a - 1.0).sum();
        let s = scale(doc);
        (0..k)
            .map(|j| {
                (theta[j] * (d_theta[j] - mean) + (self.config.alpha[j] - 1.0)
                    - theta[j] * alpha_excess)
                    / s
            })
            .collect()
    }

    /// MAP topic proportions by fixed-step gradient ascent on softmax
    /// logits from the uniform point. Returns the best iterate seen.
    pub fn map_theta(&self, doc: &Document, pconfig: &PredictConfig) -> Array1<f64> {
        let k = self.config.k;
        if k == 1 {
            return Array1::from_elem(1, 1.0);
        }
        let mut logits = vec![0.0; k];
        let mut theta = vec![1.0 / k as f64; k];
        let mut best = (self.objective(doc, &theta), theta.clone());
        for _ in 0..pconfig.steps {
            let grad = self.logit_gradient(doc, &theta);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < pconfig.tol {
                break;
            }
            for (u, g) in logits.iter_mut().zip(&grad) {
                *u += pconfig.step_size * g;
            }
            theta.copy_from_slice(&logits);
            softmax_in_place(&mut theta);
            let value = self.objective(doc, &theta);
            if value > best.0 {
                best = (value, theta.clone());
            }
        }
        Array1::from(best.1)
    }

    pub fn score(&self, theta: &Array1<f64>) -> f64 {
        let lin = self.eta.dot(theta);
        match self.config.target_type {
            TargetType::Real => lin,
            TargetType::Binary => sigmoid(lin),
        }
    }

    pub fn predict(&self, doc: &Document, pconfig: &PredictConfig) -> f64 {
        self.score(&self.map_theta(doc, pconfig))
    }
}

fn scale(doc: &Document) -> f64 {
    (doc.total_tokens() as f64).max(1.0)
}

pub fn map_theta(
    doc: &Document,
    params: &ModelParams,
    config: &ModelConfig,
    pconfig: &PredictConfig,
) -> Array1<f64> {
    PredictionModel::new(params, config).map_theta(doc, pconfig)
}

/// `eta' theta_MAP` for real targets, `sigmoid(eta' theta_MAP)` for binary.
pub fn predict_target(
    doc: &Document,
    params: &ModelParams,
    config: &ModelConfig,
    pconfig: &PredictConfig,
) -> f64 {
    PredictionModel::new(params, config).predict(doc, pconfig)
}

/// Scores for every document, in corpus order.
pub fn predict_corpus(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
    pconfig: &PredictConfig,
) -> Vec<f64> {
    let model = PredictionModel::new(params, config);
    corpus
        .documents()
        .par_iter()
        .map(|doc| model.predict(doc, pconfig))
        .collect()
}

/// One score per line.
pub fn format_predictions(scores: &[f64]) -> String {
    scores.iter().map(|s| format!("{s:.17e}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use crate::model::init_params;
    use approx::assert_abs_diff_eq;

    fn setup(k: usize, channel: bool) -> (ModelConfig, ModelParams) {
        let mut cfg = ModelConfig::new(k, 0.3, TargetType::Real);
        cfg.channel_enabled = channel;
        let corpus = Corpus::new(
            Vocab::synthetic(6).unwrap(),
            vec![Document::empty()],
            vec![0.0],
            TargetType::Real,
        )
        .unwrap();
        let (p, _) = init_params(&cfg, &corpus, 9).unwrap();
        (cfg, p)
    }

    #[test]
    fn single_topic_is_degenerate() {
        let (cfg, mut p) = setup(1, true);
        p.eta[0] = 2.5;
        let doc = Document::from_counts([(1, 3)]);
        let theta = map_theta(&doc, &p, &cfg, &PredictConfig::default());
        assert_eq!(theta.to_vec(), vec![1.0]);
        assert_eq!(
            predict_target(&doc, &p, &cfg, &PredictConfig::default()),
            2.5
        );
    }

    #[test]
    fn empty_document_stays_uniform() {
        let (cfg, p) = setup(4, true);
        let theta = map_theta(&Document::empty(), &p, &cfg, &PredictConfig::default());
        for t in theta.iter() {
            assert_eq!(*t, 0.25);
        }
    }

    #[test]
    fn null_weights() {
        let (mut cfg, mut p) = setup(3, true);
        p.eta.fill(0.0);
        let doc = Document::from_counts([(0, 2), (4, 1)]);
        assert_eq!(
            predict_target(&doc, &p, &cfg, &PredictConfig::default()),
            0.0
        );
        cfg.target_type = TargetType::Binary;
        assert_eq!(
            predict_target(&doc, &p, &cfg, &PredictConfig::default()),
            0.5
        );
    }

    #[test]
    fn ascent_never_ends_below_start() {
        for channel in [true, false] {
            let (cfg, p) = setup(3, channel);
            let model = PredictionModel::new(&p, &cfg);
            let doc = Document::from_counts([(0, 5), (2, 1), (5, 7)]);
            let theta = model.map_theta(&doc, &PredictConfig::default());
            assert_abs_diff_eq!(theta.sum(), 1.0, epsilon = 1e-12);
            assert!(theta.iter().all(|t| *t > 0.0));
            let uniform = vec![1.0 / 3.0; 3];
            assert!(
                model.objective(&doc, theta.as_slice().unwrap()) >= model.objective(&doc, &uniform)
            );
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let (mut cfg, p) = setup(3, true);
        cfg.alpha = vec![1.5, 0.7, 2.0];
        let model = PredictionModel::new(&p, &cfg);
        let doc = Document::from_counts([(0, 2), (3, 1), (5, 4)]);
        let u = [0.3, -0.4, 0.9];
        let f = |u: &[f64]| {
            let mut t = u.to_vec();
            softmax_in_place(&mut t);
            model.objective(&doc, &t)
        };
        let mut theta = u.to_vec();
        softmax_in_place(&mut theta);
        let g = model.logit_gradient(&doc, &theta);
        let fd = crate::oracle::finite_difference_gradient(f, &u, 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn repeated_calls_agree_bitwise() {
        let (mut cfg, p) = setup(3, true);
        cfg.target_type = TargetType::Binary;
        let doc = Document::from_counts([(1, 2), (2, 2)]);
        let a = predict_target(&doc, &p, &cfg, &PredictConfig::default());
        let b = predict_target(&doc, &p, &cfg, &PredictConfig::default());
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
