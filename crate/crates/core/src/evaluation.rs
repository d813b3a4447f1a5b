//! Topic coherence, prediction metrics, feature-selection metrics and the
//! support-overlap diagnostic.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::corpus::Corpus;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherenceFormula {
    /// `ln[p(i, j) / (p(i) p(j))]`.
    StandardPmi,
    /// The inverted fraction `ln[p(i) p(j) / p(i, j)]`.
    InvertedPmi,
}

impl FromStr for CoherenceFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "standard_pmi" => Ok(CoherenceFormula::StandardPmi),
            "paper" | "inverted" | "inverted_pmi" => Ok(CoherenceFormula::InvertedPmi),
            _ => Err(Error::InvalidArgument(format!(
                "unknown coherence formula '{s}'"
            ))),
        }
    }
}

impl fmt::Display for CoherenceFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoherenceFormula::StandardPmi => "standard_pmi",
            CoherenceFormula::InvertedPmi => "inverted_pmi",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    pub top_n: usize,
    pub formula: CoherenceFormula,
}

/// Indices of the `n` largest entries, ties to the lower index.
pub fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Mean pairwise PMI of each topic's `top_n` words under document
/// co-occurrence in `reference`.
///
/// Marginals are `df(w) / M`. The joint uses add-one smoothing on both the
/// co-document count and the document total, `(df(i, j) + 1) / (M + 1)`,
/// so never-co-occurring pairs stay finite and a pair present in every
/// document scores exactly zero.
pub fn topic_coherence(
    beta: &Array2<f64>,
    reference: &Corpus,
    top_n: usize,
    formula: CoherenceFormula,
) -> Result<CoherenceReport> {
    ensure!(
        top_n >= 2,
        "coherence needs at least two top words, got {top_n}"
    );
    ensure!(
        top_n <= beta.ncols(),
        "top_n {top_n} exceeds vocabulary size {}",
        beta.ncols()
    );
    ensure!(!reference.is_empty(), "reference corpus is empty");
    ensure!(
        beta.ncols() == reference.vocab_size(),
        "topics cover {} words but the reference vocabulary has {}",
        beta.ncols(),
        reference.vocab_size()
    );
    let m = reference.len() as f64;
    let df = reference.document_frequencies();

    let per_topic = beta
        .rows()
        .into_iter()
        .map(|row| {
            let top = top_indices(row.as_slice().expect("contiguous"), top_n);
            let slot: std::collections::HashMap<usize, usize> =
                top.iter().enumerate().map(|(i, &w)| (w, i)).collect();
            let mut joint = vec![0usize; top_n * top_n];
            for doc in reference.documents() {
                let present: Vec<usize> = doc
                    .entries()
                    .iter()
                    .filter_map(|(w, _)| slot.get(w).copied())
                    .collect();
                for (a, &i) in present.iter().enumerate() {
                    for &j in &present[a + 1..] {
                        joint[i * top_n + j] += 1;
                        joint[j * top_n + i] += 1;
                    }
                }
            }
            let mut total = 0.0;
            for i in 0..top_n {
                for j in 0..top_n {
                    if i == j {
                        continue;
                    }
                    let pi = df[top[i]] as f64 / m;
                    let pj = df[top[j]] as f64 / m;
                    let pij = (joint[i * top_n + j] as f64 + 1.0) / (m + 1.0);
                    let pmi = (pij / (pi * pj)).ln();
                    total += match formula {
                        CoherenceFormula::StandardPmi => pmi,
                        CoherenceFormula::InvertedPmi => -pmi,
                    };
                }
            }
            total / (top_n * (top_n - 1)) as f64
        })
        .collect::<Vec<f64>>();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(CoherenceReport {
        per_topic,
        mean,
        top_n,
        formula,
    })
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            docs: predictions.len(),
            targets: targets.len(),
        });
    }
    ensure!(!predictions.is_empty(), "rmse of an empty set");
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}

/// Mann-Whitney AUC computed from midranks, so tied scores count one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            docs: scores.len(),
            targets: labels.len(),
        });
    }
    ensure!(
        labels.iter().all(|l| *l == 0.0 || *l == 1.0),
        "labels must be 0 or 1"
    );
    let n_pos = labels.iter().filter(|l| **l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    ensure!(
        n_pos > 0 && n_neg > 0,
        "AUC needs both positive and negative labels"
    );

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == 1.0)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Words whose selector probability exceeds `threshold`.
pub fn select_relevant(varphi: &[f64], threshold: f64) -> Result<BTreeSet<usize>> {
    ensure!(
        threshold > 0.0 && threshold < 1.0,
        "selection threshold must lie in (0, 1), got {threshold}"
    );
    Ok(varphi
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > threshold)
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub selected_count: usize,
    /// Precision was defined by convention because nothing was selected.
    pub empty_selection: bool,
}

/// Precision and recall of `selected` against `truth`. An empty selection
/// has precision 1.
pub fn selection_metrics(
    selected: &BTreeSet<usize>,
    truth: &BTreeSet<usize>,
) -> Result<SelectionMetrics> {
    ensure!(!truth.is_empty(), "ground-truth relevant set is empty");
    let hits = selected.intersection(truth).count() as f64;
    let empty = selected.is_empty();
    Ok(SelectionMetrics {
        precision: if empty {
            1.0
        } else {
            hits / selected.len() as f64
        },
        recall: hits / truth.len() as f64,
        selected_count: selected.len(),
        empty_selection: empty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationRanking {
    #[default]
    Absolute,
    Signed,
}

/// Pearson correlation of each word's per-document count with the target.
/// Words with constant counts get 0.
pub fn word_target_correlations(corpus: &Corpus) -> Result<Vec<f64>> {
    let m = corpus.len();
    ensure!(m >= 2, "correlation needs at least two documents");
    let y = corpus.targets();
    let y_mean = y.iter().sum::<f64>() / m as f64;
    let y_ss: f64 = y.iter().map(|t| (t - y_mean).powi(2)).sum();
    ensure!(y_ss > 0.0, "targets are constant; correlation is undefined");

    let v = corpus.vocab_size();
    let mut sum_x = vec![0.0; v];
    let mut sum_xx = vec![0.0; v];
    let mut sum_xy = vec![0.0; v];
    for (doc, yd) in corpus.iter() {
        for &(w, c) in doc.entries() {
            let c = c as f64;
            sum_x[w] += c;
            sum_xx[w] += c * c;
            sum_xy[w] += c * (yd - y_mean);
        }
    }
    Ok((0..v)
        .map(|w| {
            let x_ss = sum_xx[w] - sum_x[w] * sum_x[w] / m as f64;
            if x_ss <= 1e-12 * sum_xx[w].max(1.0) {
                0.0
            } else {
                sum_xy[w] / (x_ss * y_ss).sqrt()
            }
        })
        .collect())
}

/// The `n` words most correlated with the target; ties go to the lower index.
pub fn correlation_topn(
    corpus: &Corpus,
    n: usize,
    ranking: CorrelationRanking,
) -> Result<Vec<usize>> {
    ensure!(
        n <= corpus.vocab_size(),
        "cannot keep {n} words from a vocabulary of {}",
        corpus.vocab_size()
    );
    let corr = word_target_correlations(corpus)?;
    let key: Vec<f64> = match ranking {
        CorrelationRanking::Absolute => corr.iter().map(|c| c.abs()).collect(),
        CorrelationRanking::Signed => corr,
    };
    Ok(top_indices(&key, n))
}

const OVERLAP_FLOOR: f64 = 1e-8;

/// `sum_v max_k beta_kv * pi_v` after zeroing entries below `1e-8`.
pub fn disjointness_overlap(beta: &Array2<f64>, pi: &Array1<f64>) -> f64 {
    let floor = |x: f64| if x < OVERLAP_FLOOR { 0.0 } else { x };
    (0..pi.len())
        .map(|v| {
            let top = beta.column(v).iter().copied().fold(0.0, f64::max);
            floor(top) * floor(pi[v])
        })
        .sum()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub coherence: Option<CoherenceReport>,
    pub rmse: Option<f64>,
    pub auc: Option<f64>,
    pub selection: Option<SelectionMetrics>,
    pub selected_count: Option<usize>,
    pub overlap: Option<f64>,
}

impl EvalReport {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        if let Some(c) = &self.coherence {
            for (k, v) in c.per_topic.iter().enumerate() {
                writeln!(out, "coherence_topic_{k},{v}").unwrap();
            }
            writeln!(out, "coherence_mean,{}", c.mean).unwrap();
        }
        if let Some(r) = self.rmse {
            writeln!(out, "rmse,{r}").unwrap();
        }
        if let Some(a) = self.auc {
            writeln!(out, "auc,{a}").unwrap();
        }
        if let Some(s) = &self.selection {
            writeln!(out, "precision,{}", s.precision).unwrap();
            writeln!(out, "recall,{}", s.recall).unwrap();
            writeln!(out, "empty_selection,{}", u8::from(s.empty_selection)).unwrap();
        }
        if let Some(n) = self.selected_count {
            writeln!(out, "selected_count,{n}").unwrap();
        }
        if let Some(o) = self.overlap {
            writeln!(out, "overlap,{o}").unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(c) = &self.coherence {
            writeln!(out, "coherence ({}, top {}):", c.formula, c.top_n).unwrap();
            for (k, v) in c.per_topic.iter().enumerate() {
                writeln!(out, "  topic {k:>3}: {v:.4}").unwrap();
            }
            writeln!(out, "  mean     : {:.4}", c.mean).unwrap();
        }
        if let Some(r) = self.rmse {
            writeln!(out, "rmse           : {r:.6}").unwrap();
        }
        if let Some(a) = self.auc {
            writeln!(out, "auc            : {a:.6}").unwrap();
        }
        if let Some(s) = &self.selection {
            let flag = if s.empty_selection {
                " (empty selection)"
            } else {
                ""
            };
            writeln!(out, "precision      : {:.4}{flag}", s.precision).unwrap();
            writeln!(out, "recall         : {:.4}", s.recall).unwrap();
        }
        if let Some(n) = self.selected_count {
            writeln!(out, "selected words : {n}").unwrap();
        }
        if let Some(o) = self.overlap {
            writeln!(out, "overlap        : {o:.3e}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, TargetType, Vocab};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn corpus_from(docs: Vec<Document>, v: usize, targets: Vec<f64>) -> Corpus {
        Corpus::new(
            Vocab::synthetic(v).unwrap(),
            docs,
            targets,
            TargetType::Real,
        )
        .unwrap()
    }

    #[test]
    fn saturated_corpus_has_zero_coherence() {
        let docs = vec![Document::from_counts([(0, 1), (1, 2), (2, 1)]); 20];
        let c = corpus_from(docs, 3, vec![0.0; 20]);
        let beta = array![[0.5, 0.3, 0.2]];
        let r = topic_coherence(&beta, &c, 3, CoherenceFormula::StandardPmi).unwrap();
        assert_abs_diff_eq!(r.mean, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn half_coverage_pair() {
        let docs: Vec<Document> = (0..100)
            .map(|d| {
                if d < 50 {
                    Document::from_counts([(0, 1), (1, 1)])
                } else {
                    Document::from_counts([(2, 1)])
                }
            })
            .collect();
        let c = corpus_from(docs, 3, vec![0.0; 100]);
        let beta = array![[0.6, 0.4, 0.0]];
        let std = topic_coherence(&beta, &c, 2, CoherenceFormula::StandardPmi).unwrap();
        assert!((std.mean - 2f64.ln()).abs() < 0.02, "{}", std.mean);
        let lit = topic_coherence(&beta, &c, 2, CoherenceFormula::InvertedPmi).unwrap();
        assert!((lit.mean + 2f64.ln()).abs() < 0.02, "{}", lit.mean);
        assert_abs_diff_eq!(std.per_topic[0], std.mean);
    }

    #[test]
    fn coherence_argument_checks() {
        let c = corpus_from(vec![Document::from_counts([(0, 1)])], 3, vec![0.0]);
        let beta = array![[0.5, 0.3, 0.2]];
        assert!(topic_coherence(&beta, &c, 1, CoherenceFormula::StandardPmi).is_err());
        assert!(topic_coherence(&beta, &c, 4, CoherenceFormula::StandardPmi).is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rmse(&[1.5, 3.5, -0.5], &[1.0, 3.0, -1.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(),
            12.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(
            auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            1.0
        );
        assert_eq!(auc(&[0.5; 4], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        // pairs (pos, neg): (0.35,0.1) (0.35,0.4) (0.8,0.1) (0.8,0.4) -> 3 of 4
        assert_eq!(
            auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            0.75
        );
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn selection() {
        let s = select_relevant(&[1.0, 0.0, 1.0], 0.99).unwrap();
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![0, 2]);
        assert!(select_relevant(&[0.5; 5], 0.99).unwrap().is_empty());
        assert!(select_relevant(&[0.5], 1.0).is_err());

        let truth: BTreeSet<usize> = (0..50).collect();
        let m = selection_metrics(&truth, &truth).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
        let all: BTreeSet<usize> = (0..100).collect();
        let m = selection_metrics(&all, &truth).unwrap();
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        let m = selection_metrics(&BTreeSet::new(), &truth).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 0.0));
        assert!(m.empty_selection);
        assert!(selection_metrics(&truth, &BTreeSet::new()).is_err());
    }

    #[test]
    fn correlation_ranking() {
        // word 0 equals the target, word 1 is constant, words 2 and 3 are
        // mirror images with equal |correlation|.
        let targets = vec![1.0, 2.0, 3.0, 4.0];
        let docs: Vec<Document> = targets
            .iter()
            .enumerate()
            .map(|(d, y)| {
                let third = if d % 2 == 0 { 2 } else { 1 };
                Document::from_counts([(0, *y as u32), (1, 2), (2, third), (3, 3 - third)])
            })
            .collect();
        let c = corpus_from(docs, 4, targets);
        let corr = word_target_correlations(&c).unwrap();
        assert_abs_diff_eq!(corr[0], 1.0, epsilon = 1e-12);
        assert_eq!(corr[1], 0.0);
        assert_abs_diff_eq!(corr[2], -corr[3], epsilon = 1e-12);
        assert_eq!(
            correlation_topn(&c, 4, CorrelationRanking::Absolute).unwrap(),
            vec![0, 2, 3, 1]
        );
        assert_eq!(
            correlation_topn(&c, 2, CorrelationRanking::Signed).unwrap()[0],
            0
        );

        let flat = corpus_from(vec![Document::from_counts([(0, 1)]); 3], 1, vec![2.0; 3]);
        assert!(correlation_topn(&flat, 1, CorrelationRanking::Absolute).is_err());
    }

    #[test]
    fn overlap() {
        let beta = array![[0.5, 0.5, 0.0, 0.0]];
        let pi = array![0.0, 1e-9, 0.5, 0.5];
        assert_eq!(disjointness_overlap(&beta, &pi), 0.0);
        let u = array![[0.25, 0.25, 0.25, 0.25]];
        assert_abs_diff_eq!(
            disjointness_overlap(&u, &array![0.25, 0.25, 0.25, 0.25]),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn report_formats() {
        let r = EvalReport {
            rmse: Some(0.5),
            selection: Some(SelectionMetrics {
                precision: 1.0,
                recall: 0.5,
                selected_count: 3,
                empty_selection: false,
            }),
            ..Default::default()
        };
        let csv = r.to_csv();
        assert!(
            csv.contains("rmse,0.5\n")
                && csv.contains("precision,1\n")
                && csv.contains("recall,0.5\n")
        );
        assert!(r.to_text().contains("recall"));
    }
}
