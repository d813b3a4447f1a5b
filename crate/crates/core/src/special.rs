//! Special functions and small numeric helpers.

pub use statrs::function::gamma::{digamma, ln_gamma};

const ASYMPTOTIC_FROM: f64 = 6.0;

/// Trigamma via `psi1(x) = psi1(x + 1) + 1/x^2` and its asymptotic expansion.
pub fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / x
        + r / 2.0
        + r / x
            * (1.0 / 6.0
                - r * (1.0 / 30.0
                    - r * (1.0 / 42.0
                        - r * (1.0 / 30.0
                            - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * 7.0 / 6.0))))));
    acc + series
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// `x * ln(x)` with the `0 ln 0 = 0` convention.
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Solves `a x = b` for a small dense system by LU decomposition. `a` is
/// row-major `n x n`. Returns `None` if singular.
pub fn solve_dense(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n);
    let lu = nalgebra::DMatrix::from_row_slice(n, n, a).lu();
    lu.solve(&nalgebra::DVector::from_column_slice(b))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.as_slice().to_vec())
}

/// One draw from `Dirichlet(alpha)` via normalized Gamma variates.
pub fn sample_dirichlet<R: rand::Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    use rand_distr::{Distribution, Gamma};
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // every draw underflowed; fall back to the largest concentration
        let best = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        draws
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = f64::from(u8::from(i == best)));
    }
    draws
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Reference values computed with mpmath at 30 digits.
    const DIGAMMA_TABLE: &[(f64, f64)] = &[
        (0.001, -1000.5755719318103),
        (0.5, -1.9635100260214235),
        (1.0, -0.5772156649015329),
        (2.0, 0.42278433509846713),
        (3.0, 0.9227843350984671),
        (5.5, 1.6110931485817512),
        (6.0, 1.7061176684318005),
        (10.0, 2.251752589066721),
        (123.456, 4.811829323828985),
    ];

    const TRIGAMMA_TABLE: &[(f64, f64)] = &[
        (0.001, 1000001.6425331959),
        (0.5, 4.934802200544679),
        (1.0, 1.6449340668482264),
        (2.0, 0.6449340668482264),
        (3.0, 0.39493406684822646),
        (5.5, 0.19934238698962767),
        (6.0, 0.18132295573711532),
        (10.0, 0.10516633568168575),
        (123.456, 0.008132945834278198),
    ];

    #[test]
    fn digamma_matches_table() {
        for &(x, want) in DIGAMMA_TABLE {
            let got = digamma(x);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "psi({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn trigamma_matches_table() {
        for &(x, want) in TRIGAMMA_TABLE {
            let got = trigamma(x);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "psi1({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn digamma_difference_is_exact_at_integers() {
        assert_abs_diff_eq!(digamma(2.0) - digamma(1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.3, 1.7, 5.9, 6.1, 40.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() < 1e-6 * trigamma(x), "x = {x}");
        }
    }

    #[test]
    fn softmax_properties() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[10.3, 8.8, 12.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let s = softmax(&[1000.0, 0.0]);
        assert!(s.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-15);
        assert!(s[1] < 1e-300);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_abs_diff_eq!(log_sigmoid(0.0), 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_sigmoid(-800.0), -800.0, epsilon = 1e-12);
        assert_eq!(log_sigmoid(800.0), 0.0);
        assert_abs_diff_eq!(sigmoid(logit(0.3)), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn dense_solve() {
        let a = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let x = solve_dense(&a, &[1.0, 2.0, 3.0]).unwrap();
        let r: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum())
            .collect();
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*ri, bi, epsilon = 1e-12);
        }
        assert!(solve_dense(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]).is_none());
    }
}
