//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use common::{all_docs, tiny_instance, Instance, TinyShape};
use pfslda::corpus::{
    apply_vocab_mask, mask_from_indices, split_corpus, Corpus, SplitFractions, TargetType,
};
use pfslda::elbo::{compute_elbo, compute_gradients, refresh_phi, CoordinateLayout};
use pfslda::evaluation::{
    correlation_topn, disjointness_overlap, rmse, select_relevant, selection_metrics,
    CorrelationRanking,
};
use pfslda::model::{ModelConfig, ModelParams, VariationalState};
use pfslda::oracle::{finite_difference_gradient, mc_marginal_loglik};
use pfslda::prediction::{predict_corpus, PredictConfig};
use pfslda::synthetic::{generate_dataset, SyntheticConfig};
use pfslda::trainers::{
    ca_update_beta, ca_update_eta_delta, ca_update_gamma, ca_update_phi, ca_update_pi,
    ca_update_varphi, train_coordinate_ascent, train_sgd, TrainConfig, TrainerKind,
};
use pfslda::verify::check_selector_grid;

const THRESHOLD: f64 = 0.99;
const DATASETS: usize = 5;
const K: usize = 5;
const EPOCHS: usize = 1000;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn sgd_config(seed: u64) -> TrainConfig {
    TrainConfig {
        trainer: TrainerKind::Sgd,
        epochs: EPOCHS,
        seed,
        ..Default::default()
    }
}

fn fit(corpus: &Corpus, p: f64, channel: bool, seed: u64) -> (ModelParams, VariationalState) {
    let mut config = ModelConfig::new(K, p, TargetType::Real).with_seed(seed);
    config.channel_enabled = channel;
    let (params, state, _) =
        train_sgd(corpus, None, &config, &sgd_config(seed)).expect("training succeeds");
    (params, state)
}

fn selected(state: &VariationalState) -> BTreeSet<usize> {
    select_relevant(state.varphi().as_slice().unwrap(), THRESHOLD).unwrap()
}

struct RecoveryRun {
    precision: f64,
    recall: f64,
    overlap: f64,
}

fn recovery_runs(p: f64) -> Vec<RecoveryRun> {
    let sim = SyntheticConfig::default();
    (0..DATASETS)
        .map(|i| {
            let (corpus, truth) = generate_dataset(&sim, i).unwrap();
            let (params, state) = fit(&corpus, p, true, i as u64);
            let m = selection_metrics(&selected(&state), &truth.relevant_words()).unwrap();
            RecoveryRun {
                precision: m.precision,
                recall: m.recall,
                overlap: disjointness_overlap(&params.beta(), &params.pi()),
            }
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn recovery_and_disjointness() -> Vec<Outcome> {
    let mut means = Vec::new();
    let mut overlaps = Vec::new();
    for p in [0.25, 0.15, 0.35] {
        let runs = recovery_runs(p);
        let prec = mean(runs.iter().map(|r| r.precision));
        let rec = mean(runs.iter().map(|r| r.recall));
        if p == 0.25 {
            overlaps = runs.iter().map(|r| r.overlap).collect();
        }
        means.push((p, prec, rec));
    }
    let (_, prec25, rec25) = means[0];
    let (_, prec15, rec15) = means[1];
    let (_, prec35, rec35) = means[2];
    let pass25 = prec25 >= 0.95 && rec25 >= 0.90;
    let pass15 = prec15 >= 0.99 && rec15 < rec25;
    let pass35 = rec35 >= 0.95 && prec35 < prec25;
    let worst_overlap = overlaps.iter().copied().fold(0.0, f64::max);
    vec![
        Outcome {
            name: "synthetic recovery",
            passed: pass25 && pass15 && pass35,
            detail: format!(
                "p=0.25 precision {prec25:.3} recall {rec25:.3} [{}]; p=0.15 precision {prec15:.3} recall {rec15:.3} [{}]; \
                 p=0.35 precision {prec35:.3} recall {rec35:.3} [{}]",
                verdict(pass25),
                verdict(pass15),
                verdict(pass35)
            ),
        },
        Outcome {
            name: "disjointness",
            passed: worst_overlap <= 1e-3,
            detail: format!("largest overlap over the p=0.25 runs {worst_overlap:.3e} (limit 1e-3)"),
        },
    ]
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "miss"
    }
}

fn bound_property() -> Outcome {
    let mut worst_margin = f64::INFINITY;
    let mut failures = 0;
    for seed in 0..20u64 {
        let shape = TinyShape {
            docs: 1 + (seed % 3) as usize,
            vocab: 6,
            k: 1 + (seed % 3) as usize,
            max_tokens: 8,
            target_type: if seed % 2 == 0 {
                TargetType::Real
            } else {
                TargetType::Binary
            },
            channel: true,
        };
        let inst = tiny_instance(seed, &shape);
        let batch = all_docs(&inst.corpus);
        let mut state = inst.state.clone();
        refresh_phi(&inst.corpus, &batch, &inst.params, &mut state, &inst.config);
        let elbo = compute_elbo(&inst.corpus, &batch, &inst.params, &state, &inst.config)
            .unwrap()
            .total;
        let (mut value, mut var) = (0.0, 0.0);
        for (d, (doc, y)) in inst.corpus.iter().enumerate() {
            let est = mc_marginal_loglik(
                doc,
                Some(y),
                &inst.params,
                &inst.config,
                100_000,
                1000 + seed * 10 + d as u64,
            )
            .unwrap();
            value += est.value;
            var += est.stderr * est.stderr;
        }
        let margin = value + 3.0 * var.sqrt() - elbo;
        worst_margin = worst_margin.min(margin);
        if margin < 0.0 {
            failures += 1;
        }
    }
    Outcome {
        name: "bound property",
        passed: failures == 0,
        detail: format!("20 instances, {failures} violations, smallest margin {worst_margin:.4}"),
    }
}

fn gradient_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let shape = TinyShape {
            k: 2 + (seed % 2) as usize,
            target_type: if seed % 2 == 0 {
                TargetType::Real
            } else {
                TargetType::Binary
            },
            channel: seed % 5 != 4,
            ..Default::default()
        };
        let inst = tiny_instance(seed, &shape);
        let batch = all_docs(&inst.corpus);
        let layout = CoordinateLayout::new(shape.k, shape.vocab, batch.clone(), true);
        let x0 = layout.pack(&inst.params, &inst.state);
        let analytic = layout.pack_gradient(
            &compute_gradients(
                &inst.corpus,
                &batch,
                &inst.params,
                &inst.state,
                &inst.config,
            )
            .unwrap(),
        );
        let objective = |x: &[f64]| {
            let mut p = inst.params.clone();
            let mut s = inst.state.clone();
            layout.unpack(x, &mut p, &mut s);
            compute_elbo(&inst.corpus, &batch, &p, &s, &inst.config)
                .unwrap()
                .total
        };
        let numeric = finite_difference_gradient(objective, &x0, 1e-5).unwrap();
        for (a, f) in analytic.iter().zip(&numeric) {
            if a.abs() > 1e-8 {
                worst = worst.max((a - f).abs() / a.abs().max(f.abs()));
            }
        }
    }
    Outcome {
        name: "gradient suite",
        passed: worst < 1e-4,
        detail: format!("20 instances, worst relative error {worst:.3e} (limit 1e-4)"),
    }
}

fn elbo_of(inst: &Instance, params: &ModelParams, state: &VariationalState) -> f64 {
    compute_elbo(
        &inst.corpus,
        &all_docs(&inst.corpus),
        params,
        state,
        &inst.config,
    )
    .unwrap()
    .total
}

fn coordinate_ascent() -> Outcome {
    let mut worst_drop: f64 = 0.0;
    let mut worst_sweep_drop: f64 = 0.0;
    let mut grid_ok = true;
    for seed in 0..20u64 {
        let inst = tiny_instance(seed, &TinyShape::default());
        let mut params = inst.params.clone();
        let mut state = inst.state.clone();
        let mut last = elbo_of(&inst, &params, &state);
        let mut record = |params: &ModelParams, state: &VariationalState| {
            let now = elbo_of(&inst, params, state);
            worst_drop = worst_drop.max(last - now);
            last = now;
        };
        for d in 0..inst.corpus.len() {
            ca_update_phi(&inst.corpus, d, &params, &mut state, &inst.config).unwrap();
            record(&params, &state);
            ca_update_gamma(&inst.corpus, d, &params, &mut state, &inst.config, 5, 0.5).unwrap();
            record(&params, &state);
        }
        ca_update_varphi(&inst.corpus, &params, &mut state, &inst.config).unwrap();
        record(&params, &state);
        ca_update_pi(&inst.corpus, &mut params, &state, &inst.config).unwrap();
        record(&params, &state);
        ca_update_beta(&inst.corpus, &mut params, &state, &inst.config).unwrap();
        record(&params, &state);
        ca_update_eta_delta(&inst.corpus, &mut params, &state, &inst.config).unwrap();
        record(&params, &state);

        grid_ok &= check_selector_grid(seed).unwrap().passed;

        let tc = TrainConfig {
            trainer: TrainerKind::Ca,
            ca_sweeps: 30,
            convergence_tol: 0.0,
            seed,
            ..Default::default()
        };
        let (_, _, trace) = train_coordinate_ascent(&inst.corpus, &inst.config, &tc).unwrap();
        for pair in trace.elbos().windows(2) {
            worst_sweep_drop = worst_sweep_drop.max(pair[0] - pair[1]);
        }
    }
    Outcome {
        name: "coordinate ascent",
        passed: worst_drop <= 1e-8 && grid_ok && worst_sweep_drop <= 1e-6,
        detail: format!(
            "largest single-update drop {worst_drop:.2e} (limit 1e-8), selector within one grid step: {grid_ok}, \
             largest sweep drop {worst_sweep_drop:.2e} (limit 1e-6)"
        ),
    }
}

struct TradeOff {
    outcome: Outcome,
    train: Corpus,
    val: Corpus,
    well_specified: VariationalState,
}

fn val_rmse(params: &ModelParams, config: &ModelConfig, val: &Corpus) -> f64 {
    rmse(
        &predict_corpus(val, params, config, &PredictConfig::default()),
        val.targets(),
    )
    .unwrap()
}

fn trade_off() -> TradeOff {
    let (corpus, _) = generate_dataset(&SyntheticConfig::default(), 0).unwrap();
    let (train, val, _) = split_corpus(&corpus, SplitFractions::new(0.8, 0.2, 0.0), 0).unwrap();
    let mut counts = Vec::new();
    let mut rmse_well = f64::NAN;
    let mut well_specified = None;
    for p in [0.1, 0.25, 0.5, 0.9] {
        let (params, state) = fit(&train, p, true, 0);
        counts.push(selected(&state).len());
        if p == 0.25 {
            rmse_well = val_rmse(&params, &ModelConfig::new(K, p, TargetType::Real), &val);
            well_specified = Some(state);
        }
    }
    let (slda_params, _) = fit(&train, 0.25, false, 0);
    let mut slda_config = ModelConfig::new(K, 0.25, TargetType::Real);
    slda_config.channel_enabled = false;
    let rmse_slda = val_rmse(&slda_params, &slda_config, &val);
    let monotone = counts.windows(2).all(|w| w[1] + 5 >= w[0]);
    TradeOff {
        outcome: Outcome {
            name: "trade-off shape",
            passed: rmse_well < rmse_slda && monotone,
            detail: format!(
                "val RMSE p=0.25 {rmse_well:.4} vs sLDA {rmse_slda:.4}; selected counts at p=0.1,0.25,0.5,0.9: {counts:?}"
            ),
        },
        train,
        val,
        well_specified: well_specified.expect("p=0.25 run"),
    }
}

fn filtering(t: &TradeOff) -> Outcome {
    let chosen: Vec<usize> = selected(&t.well_specified).into_iter().collect();
    if chosen.is_empty() {
        return Outcome {
            name: "filtering comparison",
            passed: false,
            detail: "selector kept no words at threshold 0.99".into(),
        };
    }
    let n = chosen.len();
    let correlated = correlation_topn(&t.train, n, CorrelationRanking::Absolute).unwrap();
    let mut slda = ModelConfig::new(K, 0.25, TargetType::Real);
    slda.channel_enabled = false;
    let score = |keep: &[usize]| {
        let mask = mask_from_indices(t.train.vocab_size(), keep);
        let train = apply_vocab_mask(&t.train, &mask).unwrap();
        let val = apply_vocab_mask(&t.val, &mask).unwrap();
        let (params, _) = fit(&train, 0.25, false, 0);
        val_rmse(&params, &slda, &val)
    };
    let rmse_selector = score(&chosen);
    let rmse_corr = score(&correlated);
    Outcome {
        name: "filtering comparison",
        passed: rmse_selector <= rmse_corr,
        detail: format!("{n} words: sLDA val RMSE on selector vocabulary {rmse_selector:.4} vs correlation vocabulary {rmse_corr:.4}"),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes = vec![bound_property(), gradient_suite(), coordinate_ascent()];
    outcomes.extend(recovery_and_disjointness());
    let t = trade_off();
    let filter = filtering(&t);
    outcomes.push(t.outcome);
    outcomes.push(filter);

    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!(
        "{} of {} criteria passed in {:.0}s",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
