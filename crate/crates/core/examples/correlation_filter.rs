//! Compare two ways of shrinking the vocabulary before fitting plain sLDA:
//! the words kept by the model's selector, and the same number of words
//! most correlated with the target.
//!
//! ```text
//! cargo run --release --example correlation_filter -- [threshold]
//! ```

use pfslda::corpus::{
    apply_vocab_mask, mask_from_indices, split_corpus, Corpus, SplitFractions, TargetType,
};
use pfslda::evaluation::{correlation_topn, rmse, select_relevant, CorrelationRanking};
use pfslda::model::ModelConfig;
use pfslda::prediction::{predict_corpus, PredictConfig};
use pfslda::synthetic::{generate_dataset, SyntheticConfig};
use pfslda::trainers::{train_sgd, TrainConfig};

fn slda_rmse(train: &Corpus, val: &Corpus, keep: &[usize], k: usize) -> pfslda::Result<f64> {
    let mask = mask_from_indices(train.vocab_size(), keep);
    let train = apply_vocab_mask(train, &mask)?;
    let val = apply_vocab_mask(val, &mask)?;
    let mut config = ModelConfig::new(k, 0.5, TargetType::Real);
    config.channel_enabled = false;
    let (params, _, _) = train_sgd(&train, None, &config, &TrainConfig::default())?;
    rmse(
        &predict_corpus(&val, &params, &config, &PredictConfig::default()),
        val.targets(),
    )
}

fn main() -> pfslda::Result<()> {
    let threshold: f64 = std::env::args()
        .nth(1)
        .map_or(0.99, |s| s.parse().expect("threshold must be a number"));
    let sim = SyntheticConfig::default();
    let (corpus, truth) = generate_dataset(&sim, 3)?;
    let (train, val, _) = split_corpus(&corpus, SplitFractions::new(0.8, 0.2, 0.0), 3)?;

    let config = ModelConfig::new(sim.k, sim.p, TargetType::Real);
    let (_, state, _) = train_sgd(&train, None, &config, &TrainConfig::default())?;
    let chosen: Vec<usize> = select_relevant(state.varphi().as_slice().unwrap(), threshold)?
        .into_iter()
        .collect();
    if chosen.is_empty() {
        println!("no word passed the selector threshold {threshold}");
        return Ok(());
    }
    let correlated = correlation_topn(&train, chosen.len(), CorrelationRanking::Absolute)?;
    let relevant = truth.relevant_words();
    let hits = |words: &[usize]| words.iter().filter(|w| relevant.contains(w)).count();

    println!("{} words per vocabulary", chosen.len());
    println!(
        "selector:    {:>2} truly relevant, sLDA val RMSE {:.4}",
        hits(&chosen),
        slda_rmse(&train, &val, &chosen, sim.k)?
    );
    println!(
        "correlation: {:>2} truly relevant, sLDA val RMSE {:.4}",
        hits(&correlated),
        slda_rmse(&train, &val, &correlated, sim.k)?
    );
    Ok(())
}
