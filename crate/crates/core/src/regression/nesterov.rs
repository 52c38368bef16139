use std::time::Instant;

use super::{check_finite, ridge_solve, AscentOptions, SaddleProblem, SaddleState, SolverReport};
use crate::error::Result;

/// `gamma_0 = 0`, `gamma_1 = 1`, `gamma_{i+1} = (1 + sqrt(1 + 4 gamma_i^2)) / 2`.
pub fn momentum_sequence(len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut g = 0.0f64;
    for i in 0..len {
        if i == 1 {
            g = 1.0;
        } else if i > 1 {
            g = (1.0 + (1.0 + 4.0 * g * g).sqrt()) / 2.0;
        }
        out.push(g);
    }
    out
}

/// Accelerated projected gradient ascent on `g`.
///
/// The gradient is taken at the extrapolated point `Y`, i.e. `theta` is
/// re-solved at `Y` before each step; the new iterate is projected onto the
/// box only (no PSD projection).
pub fn nesterov_solve(problem: &SaddleProblem, opts: &AscentOptions) -> Result<(SaddleState, SolverReport)> {
    let start = Instant::now();
    let alpha = opts.step_for(problem.lambda)?;
    let lambda = problem.lambda;
    let bounds = &problem.bounds;

    let mut c_prev = problem.c_start.clone();
    let mut b_prev = problem.b_start.clone();
    let mut c = c_prev.clone();
    let mut b = b_prev.clone();
    let mut theta = ridge_solve(&c, &b, lambda)?;
    let mut g = -b.dot(&theta);
    let mut gamma = 1.0f64;
    let mut report = SolverReport::new("nesterov");
    let mut converged = false;

    for t in 1..=opts.max_iter {
        let gamma_next = (1.0 + (1.0 + 4.0 * gamma * gamma).sqrt()) / 2.0;
        let w = (gamma - 1.0) / gamma_next;
        let yc = &c + (&c - &c_prev) * w;
        let yb = &b + (&b - &b_prev) * w;
        let theta_y = ridge_solve(&yc, &yb, lambda).map_err(|_| crate::Error::Divergence { iteration: t })?;
        let c_next = bounds.project_c(&(&yc + &theta_y * theta_y.transpose() * alpha));
        let b_next = bounds.project_b(&(&yb - &theta_y * (2.0 * alpha)));
        check_finite(t, &c_next, &b_next)?;

        let step = ((&c_next - &yc).norm_squared() + (&b_next - &yb).norm_squared()).sqrt();
        c_prev = std::mem::replace(&mut c, c_next);
        b_prev = std::mem::replace(&mut b, b_next);
        gamma = gamma_next;
        theta = ridge_solve(&c, &b, lambda).map_err(|_| crate::Error::Divergence { iteration: t })?;
        let g_next = -b.dot(&theta);
        report.push(g_next, step / alpha);
        let change = (g_next - g).abs();
        g = g_next;
        let scale = (c.norm_squared() + b.norm_squared()).sqrt().max(1.0);
        if step == 0.0 || (change < opts.tol * g.abs().max(1.0) && step < opts.tol.sqrt() * scale) {
            converged = true;
            break;
        }
    }
    report.finish(converged, start.elapsed());
    Ok((SaddleState { theta, c, b, lambda }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{near_singular_fixture, pga_solve, tests::random_spd, SaddleProblem};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn momentum_reference_values() {
        let g = momentum_sequence(4);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 1.0);
        assert!((g[2] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        // (1 + sqrt(1 + 4 * 2.618...)) / 2
        let expected = (1.0 + (1.0 + 4.0 * g[2] * g[2]).sqrt()) / 2.0;
        assert!((g[3] - expected).abs() < 1e-15);
        assert!((g[3] - 2.193_527).abs() < 1e-6);
    }

    #[test]
    fn zero_width_box_is_plain_ridge() {
        let c0 = random_spd(3, 4);
        let b0 = DVector::from_vec(vec![0.2, 1.0, -0.4]);
        let p = SaddleProblem::from_box(&c0, &DMatrix::from_element(3, 3, 1.0), &b0, &DVector::from_element(3, 1.0), 0.0, 0.2)
            .unwrap();
        let (state, report) = nesterov_solve(&p, &AscentOptions::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(state.theta, ridge_solve(&c0, &b0, 0.2).unwrap());
    }

    #[test]
    fn agrees_with_pga_on_random_boxes() {
        for seed in 0..5 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c0 = random_spd(4, seed + 100);
            let b0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let delta = DMatrix::from_fn(4, 4, |_, _| rng.random_range(0.0..0.1));
            let delta = crate::linalg::symmetric_part(&delta);
            let bd = DVector::from_fn(4, |_, _| rng.random_range(0.0..0.1));
            let p = SaddleProblem::from_box(&c0, &delta, &b0, &bd, 2.0, 0.5).unwrap();
            let opts = AscentOptions { max_iter: 50_000, tol: 1e-13, step: None };
            let (a, _) = pga_solve(&p, &opts).unwrap();
            let (n, _) = nesterov_solve(&p, &opts).unwrap();
            assert!((a.g() - n.g()).abs() < 1e-4, "seed {seed}: {} vs {}", a.g(), n.g());
            assert!(p.bounds.contains(&n.c, &n.b, 0.0));
        }
    }

    #[test]
    fn reaches_fixture_plateau_in_fewer_iterations() {
        // with a large ridge term both methods land on the optimal vertex in a
        // couple of steps; a small one makes the ascent genuinely iterative
        let p = near_singular_fixture(0.01);
        let opts = AscentOptions { max_iter: 20_000, tol: 0.0, step: None };
        let (_, pga) = pga_solve(&p, &opts).unwrap();
        let (_, nes) = nesterov_solve(&p, &opts).unwrap();
        let best = pga.g_trace.iter().chain(&nes.g_trace).copied().fold(f64::NEG_INFINITY, f64::max);
        let tp = pga.iterations_to(best, 1e-4).unwrap();
        let tn = nes.iterations_to(best, 1e-4).unwrap();
        assert!(tn < tp, "nesterov {tn} vs pga {tp}");
    }
}
