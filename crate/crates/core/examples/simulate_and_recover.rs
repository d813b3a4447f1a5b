//! Generate a synthetic dataset with known relevant words, fit the model
//! and score the recovered word selection.
//!
//! ```text
//! cargo run --release --example simulate_and_recover -- [p] [dataset] [trainer]
//! ```

use std::time::Instant;

use pfslda::corpus::TargetType;
use pfslda::evaluation::{disjointness_overlap, select_relevant, selection_metrics};
use pfslda::model::ModelConfig;
use pfslda::synthetic::{empirical_channel_rate, generate_dataset, SyntheticConfig};
use pfslda::trainers::{train, TrainConfig, TrainerKind};

fn main() -> pfslda::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let p: f64 = args
        .first()
        .map_or(0.25, |s| s.parse().expect("p must be a number"));
    let index: usize = args.get(1).map_or(0, |s| s.parse().expect("dataset index"));
    let trainer: TrainerKind = args.get(2).map_or(Ok(TrainerKind::Sgd), |s| s.parse())?;

    let sim = SyntheticConfig::default();
    let (corpus, truth) = generate_dataset(&sim, index)?;
    println!(
        "dataset {index}: {} docs, {} tokens, relevant-token rate {:.3}",
        corpus.len(),
        corpus.total_tokens(),
        empirical_channel_rate(&corpus, &truth)?
    );

    let config = ModelConfig::new(sim.k, p, TargetType::Real);
    let tc = TrainConfig {
        trainer,
        seed: index as u64,
        ..Default::default()
    };
    let start = Instant::now();
    let (params, state, trace) = train(&corpus, None, &config, &tc)?;
    let last = trace.records.last().expect("at least one record");
    println!(
        "{trainer} fit in {:.1}s: {} records, final ELBO {:.2}, converged {}",
        start.elapsed().as_secs_f64(),
        trace.records.len(),
        last.elbo,
        trace.converged
    );

    let selected = select_relevant(state.varphi().as_slice().unwrap(), 0.99)?;
    let metrics = selection_metrics(&selected, &truth.relevant_words())?;
    println!(
        "p = {p}: selected {} words, precision {:.3}, recall {:.3}",
        metrics.selected_count, metrics.precision, metrics.recall
    );
    println!(
        "overlap {:.3e}",
        disjointness_overlap(&params.beta(), &params.pi())
    );
    println!("eta {:.3}  delta {:.3}", params.eta, params.delta());
    Ok(())
}
