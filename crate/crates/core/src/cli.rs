//! Command-line front end: simulate, train, predict, eval, select, filter
//! and verify.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{
    apply_vocab_mask, load_corpus, load_documents, load_vocab, mask_from_indices, Corpus,
    TargetType,
};
use crate::error::{ensure, Error, Result};
use crate::evaluation::{
    auc, correlation_topn, disjointness_overlap, rmse, select_relevant, selection_metrics,
    topic_coherence, CoherenceFormula, CorrelationRanking, EvalReport,
};
use crate::model::{Checkpoint, ModelConfig};
use crate::prediction::{format_predictions, predict_corpus, PredictConfig};
use crate::synthetic::{generate_dataset, write_dataset, SyntheticConfig, SyntheticTruth};
use crate::trainers::{train, TrainConfig, TrainerKind};
use crate::verify::run_checks;

#[derive(Debug, Parser)]
#[command(name = "pfslda", version, about = "Prediction-focused supervised LDA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic datasets with known relevant words.
    Simulate(SimulateArgs),
    /// Fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Score documents with a trained model.
    Predict(PredictArgs),
    /// Report coherence, prediction quality and selection metrics.
    Eval(EvalArgs),
    /// List the words whose selector exceeds a threshold.
    Select(SelectArgs),
    /// Restrict a corpus to selected or target-correlated words.
    Filter(FilterArgs),
    /// Check the ELBO and its updates against brute-force references.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainerArg {
    Sgd,
    Ca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Real,
    Binary,
}

impl From<TargetArg> for TargetType {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Real => TargetType::Real,
            TargetArg::Binary => TargetType::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulaArg {
    Standard,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterBy {
    Varphi,
    Correlation,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory; dataset i is written to `<out>/dataset_<i>`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Vocabulary size.
    #[arg(long, default_value_t = 100)]
    pub v: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Probability that a token comes from the relevant channel.
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    #[arg(long, default_value_t = 1000)]
    pub docs: usize,
    #[arg(long, default_value_t = 100)]
    pub doc_len: usize,
    #[arg(long, default_value_t = 5)]
    pub datasets: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Documents file (`index:count` pairs, one document per line).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    /// `off` fits plain supervised LDA.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub channel: Switch,
    #[arg(long, value_enum, default_value_t = TrainerArg::Sgd)]
    pub trainer: TrainerArg,
    /// Epochs for sgd, sweeps for ca.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.025)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TargetArg::Real)]
    pub target_type: TargetArg,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional `step,elbo,val_metric` CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Worker threads for gradient reductions.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// One score per line; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Comma-separated subset of coherence, rmse, auc, precision, recall,
    /// selected, overlap.
    #[arg(long, default_value = "coherence,rmse,auc,selected,overlap")]
    pub metrics: String,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Selector threshold for precision, recall and the selected count.
    #[arg(long, default_value_t = 0.99)]
    pub threshold: f64,
    /// `standard` is log p(i,j)/(p(i)p(j)); `paper` inverts the fraction.
    #[arg(long, value_enum, default_value_t = FormulaArg::Standard)]
    pub coherence_formula: FormulaArg,
    /// Ground truth for precision and recall; defaults to `truth.txt` next
    /// to the corpus file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the report as `metric,value` CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pub threshold: f64,
    /// One word index per line; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Targets aligned with the corpus; defaults to `targets.txt` next to
    /// the corpus file.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TargetArg::Real)]
    pub target_type: TargetArg,
    #[arg(long, value_enum)]
    pub by: FilterBy,
    /// Checkpoint whose selector drives `--by varphi`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Words kept by `--by correlation`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Selector threshold for `--by varphi`.
    #[arg(long, default_value_t = 0.99)]
    pub threshold: f64,
    /// Output directory receiving `vocab.txt`, `docs.txt` and `targets.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Predict(a) => predict(&a),
        Command::Eval(a) => eval(&a),
        Command::Select(a) => select(&a),
        Command::Filter(a) => filter(&a),
        Command::Verify(a) => verify(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Documents and vocabulary without targets, for scoring.
fn load_unlabeled(docs: &Path, vocab: &Path, target_type: TargetType) -> Result<Corpus> {
    let vocab = load_vocab(vocab)?;
    let documents = load_documents(docs, vocab.len())?;
    let m = documents.len();
    Corpus::new(vocab, documents, vec![0.0; m], target_type)
}

fn check_vocab(model: &Checkpoint, vocab_size: usize) -> Result<()> {
    ensure!(
        model.params.vocab_size() == vocab_size,
        "model has V={} but the vocabulary has {} words",
        model.params.vocab_size(),
        vocab_size
    );
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let config = SyntheticConfig {
        vocab_size: a.v,
        relevant_count: a.v / 2,
        k: a.k,
        p: a.p,
        alpha: vec![1.0; a.k],
        docs: a.docs,
        doc_length: a.doc_len,
        datasets: a.datasets,
        seed: a.seed,
        ..Default::default()
    };
    config.validate()?;
    for i in 0..a.datasets {
        let (corpus, truth) = generate_dataset(&config, i)?;
        let dir = a.out.join(format!("dataset_{i}"));
        write_dataset(&dir, &corpus, &truth)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let target_type = a.target_type.into();
    let corpus = load_corpus(&a.vocab, &a.corpus, &a.targets, target_type)?;
    let mut config = ModelConfig::new(a.k, a.p, target_type).with_seed(a.seed);
    config.channel_enabled = a.channel == Switch::On;
    let tc = TrainConfig {
        trainer: match a.trainer {
            TrainerArg::Sgd => TrainerKind::Sgd,
            TrainerArg::Ca => TrainerKind::Ca,
        },
        epochs: a.epochs,
        ca_sweeps: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        workers: Some(a.workers),
        ..Default::default()
    };
    let (params, state, trace) = train(&corpus, None, &config, &tc)?;
    if let Some(path) = &a.trace {
        trace.save(path)?;
    }
    Checkpoint::new(config, params, &state).save(&a.out)?;
    let last = trace.records.last().map_or(f64::NAN, |r| r.elbo);
    println!(
        "trained {} records, final ELBO {last:.6}, converged {}; model written to {}",
        trace.records.len(),
        trace.converged,
        a.out.display()
    );
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = Checkpoint::load(&a.model)?;
    let corpus = load_unlabeled(&a.corpus, &a.vocab, model.config.target_type)?;
    check_vocab(&model, corpus.vocab_size())?;
    let scores = predict_corpus(
        &corpus,
        &model.params,
        &model.config,
        &PredictConfig::default(),
    );
    emit(a.out.as_deref(), &format_predictions(&scores))
}

const METRICS: [&str; 7] = [
    "coherence",
    "rmse",
    "auc",
    "precision",
    "recall",
    "selected",
    "overlap",
];

fn parse_metrics(list: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        ensure!(
            METRICS.contains(&m),
            "unknown metric '{m}' (expected one of {})",
            METRICS.join(", ")
        );
        out.insert(m.to_string());
    }
    ensure!(!out.is_empty(), "no metrics requested");
    Ok(out)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let model = Checkpoint::load(&a.model)?;
    let target_type = model.config.target_type;
    let corpus = load_corpus(&a.vocab, &a.corpus, &a.targets, target_type)?;
    check_vocab(&model, corpus.vocab_size())?;
    let varphi = model.varphi();
    let varphi = varphi.as_slice().expect("contiguous selector");
    let mut report = EvalReport::default();

    if metrics.contains("coherence") {
        let formula = match a.coherence_formula {
            FormulaArg::Standard => CoherenceFormula::StandardPmi,
            FormulaArg::Paper => CoherenceFormula::InvertedPmi,
        };
        report.coherence = Some(topic_coherence(
            &model.params.beta(),
            &corpus,
            a.top_n,
            formula,
        )?);
    }
    let wants_rmse = metrics.contains("rmse") && target_type == TargetType::Real;
    let wants_auc = metrics.contains("auc") && target_type == TargetType::Binary;
    if wants_rmse || wants_auc {
        let scores = predict_corpus(
            &corpus,
            &model.params,
            &model.config,
            &PredictConfig::default(),
        );
        if wants_rmse {
            report.rmse = Some(rmse(&scores, corpus.targets())?);
        } else {
            report.auc = Some(auc(&scores, corpus.targets())?);
        }
    }
    if metrics.contains("precision") || metrics.contains("recall") {
        let path = a
            .truth
            .clone()
            .unwrap_or_else(|| sibling(&a.corpus, "truth.txt"));
        let truth = SyntheticTruth::load(&path)?;
        let selected = select_relevant(varphi, a.threshold)?;
        report.selection = Some(selection_metrics(&selected, &truth.relevant_words())?);
    }
    if metrics.contains("selected") {
        report.selected_count = Some(select_relevant(varphi, a.threshold)?.len());
    }
    if metrics.contains("overlap") {
        report.overlap = Some(disjointness_overlap(
            &model.params.beta(),
            &model.params.pi(),
        ));
    }
    print!("{}", report.to_text());
    if let Some(path) = &a.out {
        write_text(path, &report.to_csv())?;
    }
    Ok(())
}

fn format_indices(words: &BTreeSet<usize>) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

fn select(a: &SelectArgs) -> Result<()> {
    let model = Checkpoint::load(&a.model)?;
    let varphi = model.varphi();
    let selected = select_relevant(varphi.as_slice().expect("contiguous selector"), a.threshold)?;
    emit(a.out.as_deref(), &format_indices(&selected))
}

fn filter(a: &FilterArgs) -> Result<()> {
    let targets = a
        .targets
        .clone()
        .unwrap_or_else(|| sibling(&a.corpus, "targets.txt"));
    let corpus = load_corpus(&a.vocab, &a.corpus, &targets, a.target_type.into())?;
    let keep: Vec<usize> = match a.by {
        FilterBy::Varphi => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--by varphi needs --model".into()))?;
            let model = Checkpoint::load(path)?;
            check_vocab(&model, corpus.vocab_size())?;
            let varphi = model.varphi();
            select_relevant(varphi.as_slice().expect("contiguous selector"), a.threshold)?
                .into_iter()
                .collect()
        }
        FilterBy::Correlation => {
            let n =
                a.n.ok_or_else(|| Error::InvalidArgument("--by correlation needs --n".into()))?;
            correlation_topn(&corpus, n, CorrelationRanking::Absolute)?
        }
    };
    let filtered = apply_vocab_mask(&corpus, &mask_from_indices(corpus.vocab_size(), &keep))?;
    filtered.save_dir(&a.out)?;
    println!(
        "kept {} of {} words; wrote {}",
        filtered.vocab_size(),
        corpus.vocab_size(),
        a.out.display()
    );
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<()> {
    let checks = run_checks(a.seed, a.samples)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    ensure!(failed == 0, "{failed} of {} checks failed", checks.len());
    Ok(())
}
