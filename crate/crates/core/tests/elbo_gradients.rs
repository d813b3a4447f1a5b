mod common;

use common::{all_docs, tiny_instance, TinyShape};
use pfslda::corpus::TargetType;
use pfslda::elbo::{compute_elbo, compute_gradients, refresh_phi, CoordinateLayout};
use pfslda::oracle::finite_difference_gradient;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Worst relative error over coordinates with |g| > 1e-8.
fn check(seed: u64, shape: &TinyShape, include_phi: bool, refresh: bool) -> f64 {
    let inst = tiny_instance(seed, shape);
    let batch = all_docs(&inst.corpus);
    let mut state = inst.state.clone();
    if refresh {
        refresh_phi(&inst.corpus, &batch, &inst.params, &mut state, &inst.config);
    }
    let layout = CoordinateLayout::new(shape.k, shape.vocab, batch.clone(), include_phi);
    let x0 = layout.pack(&inst.params, &state);
    let analytic = layout.pack_gradient(
        &compute_gradients(&inst.corpus, &batch, &inst.params, &state, &inst.config).unwrap(),
    );
    assert_eq!(analytic.len(), x0.len());

    let objective = |x: &[f64]| {
        let mut p = inst.params.clone();
        let mut s = state.clone();
        layout.unpack(x, &mut p, &mut s);
        if refresh {
            refresh_phi(&inst.corpus, &batch, &p, &mut s, &inst.config);
        }
        compute_elbo(&inst.corpus, &batch, &p, &s, &inst.config)
            .unwrap()
            .total
    };
    let numeric = finite_difference_gradient(objective, &x0, STEP).unwrap();

    let mut worst: f64 = 0.0;
    for (i, (a, f)) in analytic.iter().zip(&numeric).enumerate() {
        if a.abs() > 1e-8 {
            let err = relative_error(*a, *f);
            assert!(
                err < REL_TOL,
                "seed {seed}: {} analytic {a:e} vs fd {f:e} (rel {err:e})",
                layout.name(i)
            );
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn real_targets_channel_on() {
    for seed in 0..20 {
        check(seed, &TinyShape::default(), true, false);
    }
}

#[test]
fn binary_targets_channel_on() {
    let shape = TinyShape {
        target_type: TargetType::Binary,
        ..Default::default()
    };
    for seed in 100..120 {
        check(seed, &shape, true, false);
    }
}

#[test]
fn channel_off_baseline() {
    for tt in [TargetType::Real, TargetType::Binary] {
        let shape = TinyShape {
            target_type: tt,
            channel: false,
            ..Default::default()
        };
        for seed in 200..210 {
            check(seed, &shape, true, false);
        }
    }
}

#[test]
fn three_topics() {
    let shape = TinyShape {
        k: 3,
        ..Default::default()
    };
    for seed in 300..310 {
        check(seed, &shape, false, false);
    }
}

/// With responsibilities re-optimized inside every probe, the partial
/// gradient is still the total derivative.
#[test]
fn envelope_with_closed_form_responsibilities() {
    for seed in 400..410 {
        check(seed, &TinyShape::default(), false, true);
    }
}
