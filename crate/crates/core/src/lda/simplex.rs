//! Regularized maximization over the probability simplex:
//! `max_p  p'f - delta |p|^2  s.t.  p >= 0, sum p = 1`.
//! The solution is `p_i = [(f_i - lambda) / (2 delta)]_+` for the multiplier
//! `lambda` that makes the weights sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap of [`simplex_bisection`].
pub const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights {
    pub p: Vec<f64>,
    /// Multiplier of the sum constraint.
    pub lambda: f64,
    pub iterations: usize,
}

fn check(f: &[f64], delta: f64) -> Result<()> {
    if f.is_empty() {
        return Err(Error::InvalidParameter("simplex needs at least one loss".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simplex losses".into()));
    }
    Ok(())
}

fn weights_at(f: &[f64], delta: f64, lambda: f64) -> Vec<f64> {
    f.iter().map(|&v| ((v - lambda) / (2.0 * delta)).max(0.0)).collect()
}

/// Bisection on the multiplier until `|sum p - 1| <= eps`.
///
/// The upper end `max f` gives `sum p = 0`. The lower end is
/// `min(0, min f - 2 delta)`, where every weight is at least one; zero alone
/// is not a valid bracket when the losses are small relative to `delta`.
pub fn simplex_bisection(f: &[f64], delta: f64, eps: f64) -> Result<SimplexWeights> {
    check(f, delta)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let fmax = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fmin = f.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = (fmin - 2.0 * delta).min(0.0);
    let mut hi = fmax;
    let mut lambda = 0.5 * (lo + hi);
    let mut p = weights_at(f, delta, lambda);
    let mut iterations = 0;
    while iterations < MAX_BISECTION_STEPS {
        lambda = 0.5 * (lo + hi);
        p = weights_at(f, delta, lambda);
        iterations += 1;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() <= eps {
            break;
        }
        if sum < 1.0 {
            hi = lambda;
        } else {
            lo = lambda;
        }
    }
    Ok(SimplexWeights { p, lambda, iterations })
}

/// Exact solution by sorting: with `f` sorted in decreasing order, the active
/// set is the largest prefix whose closed-form multiplier stays below its
/// smallest member.
pub fn simplex_sort_solve(f: &[f64], delta: f64) -> Result<SimplexWeights> {
    check(f, delta)?;
    let mut sorted = f.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut lambda = sorted[0] - 2.0 * delta;
    for (m, &v) in sorted.iter().enumerate() {
        prefix += v;
        let cand = (prefix - 2.0 * delta) / (m + 1) as f64;
        if cand < v {
            lambda = cand;
        } else {
            break;
        }
    }
    Ok(SimplexWeights {
        p: weights_at(f, delta, lambda),
        lambda,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Tries every nonempty active set and keeps the one satisfying KKT.
    fn kkt_oracle(f: &[f64], delta: f64) -> Vec<f64> {
        let k = f.len();
        for bits in 1u32..(1 << k) {
            let active: Vec<usize> = (0..k).filter(|&i| bits >> i & 1 == 1).collect();
            let lambda = (active.iter().map(|&i| f[i]).sum::<f64>() - 2.0 * delta) / active.len() as f64;
            let ok = (0..k).all(|i| {
                let p = (f[i] - lambda) / (2.0 * delta);
                if active.contains(&i) {
                    p >= -1e-12
                } else {
                    p <= 1e-12
                }
            });
            if ok {
                return (0..k).map(|i| if active.contains(&i) { (f[i] - lambda) / (2.0 * delta) } else { 0.0 }).collect();
            }
        }
        unreachable!("some active set satisfies KKT")
    }

    #[test]
    fn reference_cases() {
        for solve in [
            |f: &[f64], d: f64| simplex_bisection(f, d, 1e-12).unwrap(),
            |f: &[f64], d: f64| simplex_sort_solve(f, d).unwrap(),
        ] {
            let s = solve(&[3.0, 3.0], 0.7);
            assert_relative_eq!(s.p[0], 0.5, epsilon = 1e-9);
            assert_relative_eq!(s.p[1], 0.5, epsilon = 1e-9);

            let s = solve(&[2.0, 0.0], 0.5);
            assert_relative_eq!(s.p[0], 1.0, epsilon = 1e-9);
            assert_relative_eq!(s.p[1], 0.0, epsilon = 1e-9);
            assert_relative_eq!(s.lambda, 1.0, epsilon = 1e-9);

            let s = solve(&[1.0, 0.0], 10.0);
            assert_relative_eq!(s.p[0], 0.525, epsilon = 1e-9);
            assert_relative_eq!(s.p[1], 0.475, epsilon = 1e-9);
        }
    }

    #[test]
    fn grid_search_agrees_on_two_losses() {
        let (f, delta) = ([1.0, 0.0], 10.0);
        let best = (0..=100_000)
            .map(|t| t as f64 / 100_000.0)
            .max_by(|a, b| {
                let obj = |p: f64| p * f[0] + (1.0 - p) * f[1] - delta * (p * p + (1.0 - p) * (1.0 - p));
                obj(*a).total_cmp(&obj(*b))
            })
            .unwrap();
        assert!((best - 0.525).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(simplex_bisection(&[], 1.0, 1e-8).is_err());
        assert!(simplex_bisection(&[1.0], 0.0, 1e-8).is_err());
        assert!(simplex_sort_solve(&[f64::NAN], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn solvers_match_oracle(f in prop::collection::vec(-5.0f64..5.0, 1..7), delta in 0.01f64..10.0) {
            let oracle = kkt_oracle(&f, delta);
            let b = simplex_bisection(&f, delta, 1e-8).unwrap();
            let s = simplex_sort_solve(&f, delta).unwrap();
            prop_assert!(b.iterations <= 64);
            prop_assert!((b.p.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            prop_assert!(b.p.iter().all(|&v| v >= 0.0));
            prop_assert!(s.p.iter().all(|&v| v >= 0.0));
            for i in 0..f.len() {
                prop_assert!((b.p[i] - oracle[i]).abs() < 1e-6);
                prop_assert!((s.p[i] - oracle[i]).abs() < 1e-9);
            }
        }
    }
}
