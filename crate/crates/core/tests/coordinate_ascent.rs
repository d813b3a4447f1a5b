mod common;

use common::{all_docs, tiny_instance, Instance, TinyShape};
use pfslda::elbo::compute_elbo;
use pfslda::model::{ModelParams, VariationalState};
use pfslda::oracle::{grid_optimal_coordinate, unit_grid};
use pfslda::trainers::{
    ca_update_beta, ca_update_eta_delta, ca_update_gamma, ca_update_phi, ca_update_pi,
    ca_update_varphi, train_coordinate_ascent, TrainConfig, TrainerKind,
};

const UPDATE_TOL: f64 = 1e-8;

fn elbo(inst: &Instance, params: &ModelParams, state: &VariationalState) -> f64 {
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

fn shapes() -> Vec<TinyShape> {
    vec![
        TinyShape::default(),
        TinyShape {
            docs: 4,
            vocab: 10,
            k: 3,
            max_tokens: 12,
            ..Default::default()
        },
    ]
}

#[test]
fn each_update_never_decreases_the_elbo() {
    for shape in shapes() {
        for seed in 0..20 {
            let inst = tiny_instance(seed, &shape);
            let mut params = inst.params.clone();
            let mut state = inst.state.clone();
            let mut last = elbo(&inst, &params, &state);
            let mut check = |name: &str, params: &ModelParams, state: &VariationalState| {
                let now = elbo(&inst, params, state);
                assert!(
                    now >= last - UPDATE_TOL,
                    "seed {seed}: {name} lowered the ELBO {last} -> {now}"
                );
                last = now;
            };
            for d in 0..inst.corpus.len() {
                ca_update_phi(&inst.corpus, d, &params, &mut state, &inst.config).unwrap();
                check("phi", &params, &state);
                ca_update_gamma(&inst.corpus, d, &params, &mut state, &inst.config, 5, 0.5)
                    .unwrap();
                check("gamma", &params, &state);
            }
            ca_update_varphi(&inst.corpus, &params, &mut state, &inst.config).unwrap();
            check("varphi", &params, &state);
            ca_update_pi(&inst.corpus, &mut params, &state, &inst.config).unwrap();
            check("pi", &params, &state);
            ca_update_beta(&inst.corpus, &mut params, &state, &inst.config).unwrap();
            check("beta", &params, &state);
            ca_update_eta_delta(&inst.corpus, &mut params, &state, &inst.config).unwrap();
            check("eta_delta", &params, &state);
        }
    }
}

#[test]
fn selector_matches_grid_oracle() {
    let grid = unit_grid(1000);
    for seed in 0..20 {
        let inst = tiny_instance(seed, &TinyShape::default());
        let mut updated = inst.state.clone();
        ca_update_varphi(&inst.corpus, &inst.params, &mut updated, &inst.config).unwrap();
        let counts = inst.corpus.word_counts();
        for w in (0..inst.corpus.vocab_size()).filter(|&w| counts[w] > 0) {
            let objective = |s: f64| {
                let mut st = inst.state.clone();
                st.varphi_logits[w] = (s.ln() - (-s).ln_1p()).clamp(-40.0, 40.0);
                elbo(&inst, &inst.params, &st)
            };
            let (best, _) = grid_optimal_coordinate(objective, &grid);
            let closed = 1.0 / (1.0 + (-updated.varphi_logits[w]).exp());
            assert!(
                (best - closed).abs() <= 1e-3 + 1e-12,
                "seed {seed} word {w}: grid {best} vs closed form {closed}"
            );
        }
    }
}

#[test]
fn sweeps_are_monotone() {
    for shape in shapes() {
        for seed in 0..10 {
            let inst = tiny_instance(seed, &shape);
            let tc = TrainConfig {
                trainer: TrainerKind::Ca,
                ca_sweeps: 40,
                convergence_tol: 0.0,
                seed,
                ..Default::default()
            };
            let (_, _, trace) = train_coordinate_ascent(&inst.corpus, &inst.config, &tc).unwrap();
            let elbos = trace.elbos();
            assert_eq!(elbos.len(), 40);
            for pair in elbos.windows(2) {
                assert!(
                    pair[1] >= pair[0] - 1e-6,
                    "seed {seed}: sweep ELBO fell {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }
}

#[test]
fn channel_off_sweeps_are_monotone() {
    let shape = TinyShape {
        channel: false,
        ..Default::default()
    };
    for seed in 0..10 {
        let inst = tiny_instance(seed, &shape);
        let tc = TrainConfig {
            trainer: TrainerKind::Ca,
            ca_sweeps: 30,
            convergence_tol: 0.0,
            ..Default::default()
        };
        let (_, _, trace) = train_coordinate_ascent(&inst.corpus, &inst.config, &tc).unwrap();
        for pair in trace.elbos().windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-6,
                "seed {seed}: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }
}
