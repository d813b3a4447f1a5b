//! Bag-of-words corpora with aligned prediction targets.
//!
//! On-disk layout is three plain-text files:
//!
//! * vocab: one token per line, the 0-based line number is the word index;
//! * docs: one document per line as space-separated `index:count` pairs
//!   (an empty line is an empty document);
//! * targets: one decimal number per line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetType {
    Real,
    Binary,
}

impl fmt::Display for TargetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetType::Real => f.write_str("real"),
            TargetType::Binary => f.write_str("binary"),
        }
    }
}

impl FromStr for TargetType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(TargetType::Real),
            "binary" => Ok(TargetType::Binary),
            other => Err(Error::InvalidArgument(format!(
                "unknown target type '{other}' (expected real or binary)"
            ))),
        }
    }
}

/// Ordered list of distinct tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        ensure!(
            !tokens.is_empty(),
            "vocabulary must contain at least one token"
        );
        let mut seen = HashSet::with_capacity(tokens.len());
        for t in &tokens {
            ensure!(seen.insert(t.as_str()), "duplicate vocabulary token '{t}'");
        }
        Ok(Vocab { tokens })
    }

    /// Vocabulary of placeholder tokens `w0 .. w{size-1}`.
    pub fn synthetic(size: usize) -> Result<Self> {
        Vocab::new((0..size).map(|v| format!("w{v}")).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }
}

/// Sparse word counts for one document, sorted by word index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    entries: Vec<(usize, u32)>,
    total: u64,
}

impl Document {
    /// Builds a document from `(word, count)` pairs. Repeated words are
    /// merged and zero counts dropped.
    pub fn from_counts<I: IntoIterator<Item = (usize, u32)>>(pairs: I) -> Self {
        let mut merged: BTreeMap<usize, u32> = BTreeMap::new();
        for (w, c) in pairs {
            if c > 0 {
                *merged.entry(w).or_insert(0) += c;
            }
        }
        let entries: Vec<_> = merged.into_iter().collect();
        let total = entries.iter().map(|&(_, c)| c as u64).sum();
        Document { entries, total }
    }

    /// Builds a document from a token stream of word indices.
    pub fn from_tokens<I: IntoIterator<Item = usize>>(tokens: I) -> Self {
        Document::from_counts(tokens.into_iter().map(|w| (w, 1)))
    }

    pub fn empty() -> Self {
        Document::default()
    }

    /// Distinct `(word, count)` pairs in increasing word order.
    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn count(&self, word: usize) -> u32 {
        self.entries
            .binary_search_by_key(&word, |&(w, _)| w)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    /// Expands the document back into a sorted token list.
    pub fn tokens(&self) -> Vec<usize> {
        self.entries
            .iter()
            .flat_map(|&(w, c)| std::iter::repeat_n(w, c as usize))
            .collect()
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(w, _)| w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vocab,
    documents: Vec<Document>,
    targets: Vec<f64>,
    target_type: TargetType,
}

impl Corpus {
    pub fn new(
        vocab: Vocab,
        documents: Vec<Document>,
        targets: Vec<f64>,
        target_type: TargetType,
    ) -> Result<Self> {
        if documents.len() != targets.len() {
            return Err(Error::LengthMismatch {
                docs: documents.len(),
                targets: targets.len(),
            });
        }
        let v = vocab.len();
        for doc in &documents {
            if let Some(max) = doc.max_index() {
                if max >= v {
                    return Err(Error::IndexOutOfRange {
                        index: max,
                        vocab_size: v,
                    });
                }
            }
        }
        for (d, &y) in targets.iter().enumerate() {
            ensure!(y.is_finite(), "target {d} is not finite");
            if target_type == TargetType::Binary {
                ensure!(
                    y == 0.0 || y == 1.0,
                    "binary target {d} is {y}, expected 0 or 1"
                );
            }
        }
        Ok(Corpus {
            vocab,
            documents,
            targets,
            target_type,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_type(&self) -> TargetType {
        self.target_type
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Document, f64)> {
        self.documents.iter().zip(self.targets.iter().copied())
    }

    /// Corpus-wide token count of each word.
    pub fn word_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.vocab_size()];
        for doc in &self.documents {
            for &(w, c) in doc.entries() {
                counts[w] += c as u64;
            }
        }
        counts
    }

    /// Number of documents containing each word at least once.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0usize; self.vocab_size()];
        for doc in &self.documents {
            for &(w, _) in doc.entries() {
                df[w] += 1;
            }
        }
        df
    }

    pub fn total_tokens(&self) -> u64 {
        self.documents.iter().map(Document::total_tokens).sum()
    }

    /// Documents at `indices`, in that order, sharing this vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            vocab: self.vocab.clone(),
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            target_type: self.target_type,
        }
    }

    /// Same documents with targets replaced.
    pub fn with_targets(&self, targets: Vec<f64>, target_type: TargetType) -> Result<Corpus> {
        Corpus::new(
            self.vocab.clone(),
            self.documents.clone(),
            targets,
            target_type,
        )
    }

    /// Writes `vocab.txt`, `docs.txt` and `targets.txt` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.save(
            &dir.join("vocab.txt"),
            &dir.join("docs.txt"),
            &dir.join("targets.txt"),
        )
    }

    pub fn save(&self, vocab_path: &Path, docs_path: &Path, targets_path: &Path) -> Result<()> {
        write_vocab(&self.vocab, vocab_path)?;
        write_lines(docs_path, self.documents.iter().map(format_document))?;
        write_lines(targets_path, self.targets.iter().map(|y| format_target(*y)))
    }
}

fn format_document(doc: &Document) -> String {
    doc.entries()
        .iter()
        .map(|(w, c)| format!("{w}:{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn format_target(y: f64) -> String {
    if y.fract() == 0.0 && y.abs() < 1e15 {
        format!("{}", y as i64)
    } else {
        format!("{y:.17e}")
    }
}

fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    write_lines(path, vocab.tokens().iter().cloned())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let tokens = read_lines(path)?;
    Vocab::new(tokens).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::parse(path, 0, msg),
        other => other,
    })
}

/// One token per line; blank lines are ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn parse_document_line(line: &str, vocab_size: usize) -> std::result::Result<Document, String> {
    let mut pairs = Vec::new();
    for field in line.split_whitespace() {
        let (idx, cnt) = field
            .split_once(':')
            .ok_or_else(|| format!("expected index:count, found '{field}'"))?;
        let idx: usize = idx.parse().map_err(|_| format!("bad word index '{idx}'"))?;
        let cnt: u32 = cnt.parse().map_err(|_| format!("bad count '{cnt}'"))?;
        if cnt == 0 {
            return Err(format!("count for word {idx} must be at least 1"));
        }
        if idx >= vocab_size {
            return Err(format!(
                "word index {idx} out of range for vocabulary of size {vocab_size}"
            ));
        }
        pairs.push((idx, cnt));
    }
    Ok(Document::from_counts(pairs))
}

pub fn load_documents(path: &Path, vocab_size: usize) -> Result<Vec<Document>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            parse_document_line(line, vocab_size).map_err(|m| Error::parse(path, i + 1, m))
        })
        .collect()
}

pub fn load_targets(path: &Path, target_type: TargetType) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            return Err(Error::parse(path, i + 1, "empty target line"));
        }
        let y: f64 = s
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad target '{s}'")))?;
        if !y.is_finite() {
            return Err(Error::parse(path, i + 1, "target is not finite"));
        }
        if target_type == TargetType::Binary && y != 0.0 && y != 1.0 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("binary target must be 0 or 1, found {s}"),
            ));
        }
        out.push(y);
    }
    Ok(out)
}

pub fn load_corpus(
    vocab_path: &Path,
    docs_path: &Path,
    targets_path: &Path,
    target_type: TargetType,
) -> Result<Corpus> {
    let vocab = load_vocab(vocab_path)?;
    let documents = load_documents(docs_path, vocab.len())?;
    let targets = load_targets(targets_path, target_type)?;
    Corpus::new(vocab, documents, targets, target_type)
}

/// Loads the `vocab.txt` / `docs.txt` / `targets.txt` triple written by [`Corpus::save_dir`].
pub fn load_corpus_dir(dir: &Path, target_type: TargetType) -> Result<Corpus> {
    load_corpus(
        &dir.join("vocab.txt"),
        &dir.join("docs.txt"),
        &dir.join("targets.txt"),
        target_type,
    )
}

/// Keeps words that are not stopwords and whose document frequency lies in
/// `[min_doc_count, max_doc_frac * M]`.
pub fn build_vocab_filter(
    corpus: &Corpus,
    stopwords: &HashSet<String>,
    max_doc_frac: f64,
    min_doc_count: usize,
) -> Result<Vec<bool>> {
    ensure!(
        max_doc_frac > 0.0 && max_doc_frac <= 1.0,
        "max_doc_frac must lie in (0, 1], got {max_doc_frac}"
    );
    let df = corpus.document_frequencies();
    let limit = max_doc_frac * corpus.len() as f64;
    Ok(corpus
        .vocab()
        .tokens()
        .iter()
        .zip(df)
        .map(|(tok, df)| !stopwords.contains(tok) && (df as f64) <= limit && df >= min_doc_count)
        .collect())
}

/// Restricts the corpus to words with `mask[v] == true`, reindexing the
/// survivors in their original order. Documents left empty are kept.
pub fn apply_vocab_mask(corpus: &Corpus, mask: &[bool]) -> Result<Corpus> {
    ensure!(
        mask.len() == corpus.vocab_size(),
        "mask length {} does not match vocabulary size {}",
        mask.len(),
        corpus.vocab_size()
    );
    let mut remap = vec![usize::MAX; mask.len()];
    let mut tokens = Vec::new();
    for (v, keep) in mask.iter().enumerate() {
        if *keep {
            remap[v] = tokens.len();
            tokens.push(corpus.vocab().tokens()[v].clone());
        }
    }
    ensure!(!tokens.is_empty(), "vocabulary mask removes every word");
    let documents = corpus
        .documents()
        .iter()
        .map(|doc| {
            Document::from_counts(
                doc.entries()
                    .iter()
                    .filter(|&&(w, _)| mask[w])
                    .map(|&(w, c)| (remap[w], c)),
            )
        })
        .collect();
    Corpus::new(
        Vocab::new(tokens)?,
        documents,
        corpus.targets().to_vec(),
        corpus.target_type(),
    )
}

/// Mask that keeps exactly the words in `keep`.
pub fn mask_from_indices(vocab_size: usize, keep: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; vocab_size];
    for &v in keep {
        if v < vocab_size {
            mask[v] = true;
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitFractions { train, val, test }
    }
}

/// Seeded shuffle of `0..m` cut into train/val/test index lists. Val and
/// test sizes are `floor(frac * m)`; the remainder goes to train.
pub fn split_indices(m: usize, fractions: SplitFractions, seed: u64) -> Result<[Vec<usize>; 3]> {
    let SplitFractions { train, val, test } = fractions;
    ensure!(
        [train, val, test]
            .iter()
            .all(|f| f.is_finite() && *f >= 0.0),
        "split fractions must be nonnegative"
    );
    ensure!(
        (train + val + test - 1.0).abs() <= 1e-9,
        "split fractions must sum to 1, got {}",
        train + val + test
    );
    if train > 0.0 && val > 0.0 && test > 0.0 {
        ensure!(m >= 3, "cannot split {m} documents three ways");
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (val * m as f64).floor() as usize;
    let n_test = (test * m as f64).floor() as usize;
    let n_train = m - n_val - n_test;
    let test_idx = order.split_off(n_train + n_val);
    let val_idx = order.split_off(n_train);
    Ok([order, val_idx, test_idx])
}

pub fn split_corpus(
    corpus: &Corpus,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let [tr, va, te] = split_indices(corpus.len(), fractions, seed)?;
    Ok((corpus.subset(&tr), corpus.subset(&va), corpus.subset(&te)))
}
