//! Train on part of a synthetic corpus, then score held-out documents from
//! the MAP topic proportions of their words alone.
//!
//! ```text
//! cargo run --release --example predict_map
//! ```

use pfslda::corpus::{split_corpus, SplitFractions, TargetType};
use pfslda::evaluation::rmse;
use pfslda::model::ModelConfig;
use pfslda::prediction::{map_theta, predict_corpus, PredictConfig};
use pfslda::synthetic::{generate_dataset, SyntheticConfig};
use pfslda::trainers::{train_sgd, TrainConfig};

fn main() -> pfslda::Result<()> {
    let sim = SyntheticConfig {
        docs: 500,
        ..Default::default()
    };
    let (corpus, _) = generate_dataset(&sim, 1)?;
    let (train, _, test) = split_corpus(&corpus, SplitFractions::new(0.8, 0.0, 0.2), 1)?;
    let config = ModelConfig::new(sim.k, sim.p, TargetType::Real);
    let tc = TrainConfig {
        epochs: 100,
        ..Default::default()
    };
    let (params, _, _) = train_sgd(&train, None, &config, &tc)?;

    let pc = PredictConfig::default();
    for (doc, y) in test.iter().take(3) {
        let theta = map_theta(doc, &params, &config, &pc);
        let yhat: f64 = theta.dot(&params.eta);
        println!(
            "theta {:.3}  prediction {yhat:>7.3}  target {y:>7.3}",
            theta
        );
    }
    let scores = predict_corpus(&test, &params, &config, &pc);
    let baseline = train.targets().iter().sum::<f64>() / train.len() as f64;
    println!(
        "test RMSE {:.4} (mean-prediction baseline {:.4})",
        rmse(&scores, test.targets())?,
        rmse(&vec![baseline; test.len()], test.targets())?
    );
    Ok(())
}
