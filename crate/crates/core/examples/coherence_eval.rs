//! Train a model and print its top words per topic with their coherence,
//! under both coherence formulas, followed by the full evaluation report.
//!
//! ```text
//! cargo run --release --example coherence_eval -- [top_n]
//! ```

use pfslda::corpus::TargetType;
use pfslda::evaluation::{
    disjointness_overlap, rmse, select_relevant, top_indices, topic_coherence, CoherenceFormula,
    EvalReport,
};
use pfslda::model::ModelConfig;
use pfslda::prediction::{predict_corpus, PredictConfig};
use pfslda::synthetic::{generate_dataset, SyntheticConfig};
use pfslda::trainers::{train_sgd, TrainConfig};

fn main() -> pfslda::Result<()> {
    let top_n: usize = std::env::args()
        .nth(1)
        .map_or(10, |s| s.parse().expect("top_n must be an integer"));
    let sim = SyntheticConfig {
        docs: 400,
        ..Default::default()
    };
    let (corpus, _) = generate_dataset(&sim, 2)?;
    let config = ModelConfig::new(sim.k, sim.p, TargetType::Real);
    let tc = TrainConfig {
        epochs: 100,
        ..Default::default()
    };
    let (params, state, _) = train_sgd(&corpus, None, &config, &tc)?;
    let beta = params.beta();

    let standard = topic_coherence(&beta, &corpus, top_n, CoherenceFormula::StandardPmi)?;
    let inverted = topic_coherence(&beta, &corpus, top_n, CoherenceFormula::InvertedPmi)?;
    for k in 0..config.k {
        let row = beta.row(k).to_vec();
        let words: Vec<&str> = top_indices(&row, top_n)
            .into_iter()
            .map(|w| corpus.vocab().token(w).unwrap_or("?"))
            .collect();
        println!(
            "topic {k}: {:>8.4} {:>8.4}  {}",
            standard.per_topic[k],
            inverted.per_topic[k],
            words.join(" ")
        );
    }

    let scores = predict_corpus(&corpus, &params, &config, &PredictConfig::default());
    let report = EvalReport {
        coherence: Some(standard),
        rmse: Some(rmse(&scores, corpus.targets())?),
        selected_count: Some(select_relevant(state.varphi().as_slice().unwrap(), 0.99)?.len()),
        overlap: Some(disjointness_overlap(&beta, &params.pi())),
        ..Default::default()
    };
    println!("\n{}", report.to_text());
    print!("{}", report.to_csv());
    Ok(())
}
