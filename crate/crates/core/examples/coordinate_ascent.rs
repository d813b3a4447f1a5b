//! Fit a small synthetic corpus with the closed-form coordinate-ascent
//! trainer and print the ELBO per sweep.
//!
//! ```text
//! cargo run --release --example coordinate_ascent -- [sweeps]
//! ```

use pfslda::corpus::TargetType;
use pfslda::evaluation::{disjointness_overlap, select_relevant, selection_metrics};
use pfslda::model::ModelConfig;
use pfslda::synthetic::{generate_dataset, SyntheticConfig};
use pfslda::trainers::{train_coordinate_ascent, TrainConfig, TrainerKind};

fn main() -> pfslda::Result<()> {
    let sweeps: usize = std::env::args()
        .nth(1)
        .map_or(100, |s| s.parse().expect("sweeps must be an integer"));
    let sim = SyntheticConfig {
        docs: 300,
        ..Default::default()
    };
    let (corpus, truth) = generate_dataset(&sim, 0)?;
    let config = ModelConfig::new(sim.k, sim.p, TargetType::Real);
    let tc = TrainConfig {
        trainer: TrainerKind::Ca,
        ca_sweeps: sweeps,
        ..Default::default()
    };
    let (params, state, trace) = train_coordinate_ascent(&corpus, &config, &tc)?;

    let every = (trace.records.len() / 10).max(1);
    for r in trace.records.iter().step_by(every) {
        println!("sweep {:>4}  ELBO {:.3}", r.step, r.elbo);
    }
    let elbos = trace.elbos();
    let monotone = elbos.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    println!(
        "{} sweeps, converged {}, monotone {monotone}",
        elbos.len(),
        trace.converged
    );

    let chosen = select_relevant(state.varphi().as_slice().unwrap(), 0.99)?;
    let m = selection_metrics(&chosen, &truth.relevant_words())?;
    println!(
        "selected {} words: precision {:.3}, recall {:.3}; overlap {:.2e}; eta {:.3}",
        m.selected_count,
        m.precision,
        m.recall,
        disjointness_overlap(&params.beta(), &params.pi()),
        params.eta
    );
    Ok(())
}
