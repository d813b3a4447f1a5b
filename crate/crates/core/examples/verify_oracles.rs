//! Run the built-in self-checks: Monte-Carlo and exact marginal
//! likelihoods against the ELBO, finite differences against the gradient,
//! and a grid search against the closed-form selector update.
//!
//! ```text
//! cargo run --release --example verify_oracles -- [seed] [samples]
//! ```

use pfslda::verify::run_checks;

fn main() -> pfslda::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args
        .next()
        .map_or(0, |s| s.parse().expect("seed must be an integer"));
    let samples: usize = args
        .next()
        .map_or(100_000, |s| s.parse().expect("samples must be an integer"));
    let checks = run_checks(seed, samples)?;
    for c in &checks {
        println!("{c}");
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed", checks.len());
    Ok(())
}
