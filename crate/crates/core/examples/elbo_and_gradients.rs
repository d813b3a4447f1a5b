//! Evaluate the ELBO term by term on a small random instance and compare
//! its analytic gradient with central finite differences.
//!
//! ```text
//! cargo run --release --example elbo_and_gradients -- [seed]
//! ```

use pfslda::elbo::{compute_elbo, compute_gradients, CoordinateLayout};
use pfslda::oracle::finite_difference_gradient;
use pfslda::verify::{tiny_instance, TinyShape};

fn main() -> pfslda::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed must be an integer"));
    let shape = TinyShape::default();
    let inst = tiny_instance(seed, &shape)?;
    let batch: Vec<usize> = (0..inst.corpus.len()).collect();

    let e = compute_elbo(
        &inst.corpus,
        &batch,
        &inst.params,
        &inst.state,
        &inst.config,
    )?;
    println!(
        "{} documents, V={}, K={}, p={:.3}",
        inst.corpus.len(),
        shape.vocab,
        shape.k,
        inst.config.p
    );
    for (name, value) in [
        ("log p(theta)", e.log_p_theta),
        ("log p(z)", e.log_p_z),
        ("log p(w)", e.log_p_w),
        ("log p(xi)", e.log_p_xi),
        ("log p(y)", e.log_p_y),
        ("H(theta)", e.entropy_theta),
        ("H(z)", e.entropy_z),
        ("H(xi)", e.entropy_xi),
    ] {
        println!("  {name:<13}{value:>12.5}");
    }
    println!("  {:<13}{:>12.5}", "total", e.total);

    let layout = CoordinateLayout::new(shape.k, shape.vocab, batch.clone(), true);
    let x0 = layout.pack(&inst.params, &inst.state);
    let analytic = layout.pack_gradient(&compute_gradients(
        &inst.corpus,
        &batch,
        &inst.params,
        &inst.state,
        &inst.config,
    )?);
    let objective = |x: &[f64]| {
        let mut p = inst.params.clone();
        let mut s = inst.state.clone();
        layout.unpack(x, &mut p, &mut s);
        compute_elbo(&inst.corpus, &batch, &p, &s, &inst.config).map_or(f64::NAN, |e| e.total)
    };
    let numeric = finite_difference_gradient(objective, &x0, 1e-5)?;

    let mut worst = (0.0, 0);
    for (i, (a, f)) in analytic.iter().zip(&numeric).enumerate() {
        if a.abs() > 1e-8 {
            let rel = (a - f).abs() / a.abs().max(f.abs());
            if rel > worst.0 {
                worst = (rel, i);
            }
        }
    }
    println!("\n{} coordinates; first few:", x0.len());
    for i in 0..6.min(x0.len()) {
        println!(
            "  {:<20} analytic {:>12.6e}  fd {:>12.6e}",
            layout.name(i),
            analytic[i],
            numeric[i]
        );
    }
    println!(
        "worst relative error {:.2e} at {}",
        worst.0,
        layout.name(worst.1)
    );
    Ok(())
}
