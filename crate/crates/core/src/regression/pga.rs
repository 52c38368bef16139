use std::time::Instant;

use super::{check_finite, ridge_solve, AscentOptions, SaddleProblem, SaddleState, SolverReport};
use crate::error::Result;

/// Projected gradient ascent on `g` from the problem's start point.
///
/// Each iteration takes `C <- P(C + alpha theta theta')`, `b <- P(b - 2 alpha
/// theta)` and re-solves `theta` exactly. With the default step `g` never
/// decreases.
pub fn pga_solve(problem: &SaddleProblem, opts: &AscentOptions) -> Result<(SaddleState, SolverReport)> {
    let start = Instant::now();
    let alpha = opts.step_for(problem.lambda)?;
    let lambda = problem.lambda;
    let bounds = &problem.bounds;

    let mut c = problem.c_start.clone();
    let mut b = problem.b_start.clone();
    let mut theta = ridge_solve(&c, &b, lambda)?;
    let mut g = -b.dot(&theta);
    let mut report = SolverReport::new("pga");
    let mut converged = false;

    for t in 1..=opts.max_iter {
        let c_next = bounds.project_c(&(&c + &theta * theta.transpose() * alpha));
        let b_next = bounds.project_b(&(&b - &theta * (2.0 * alpha)));
        check_finite(t, &c_next, &b_next)?;
        let step = ((&c_next - &c).norm_squared() + (&b_next - &b).norm_squared()).sqrt();
        c = c_next;
        b = b_next;
        theta = ridge_solve(&c, &b, lambda).map_err(|_| crate::Error::Divergence { iteration: t })?;
        let g_next = -b.dot(&theta);
        report.push(g_next, step / alpha);
        let improvement = g_next - g;
        g = g_next;
        if step == 0.0 || improvement.abs() < opts.tol * g.abs().max(1.0) {
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
    use crate::regression::{near_singular_fixture, tests::random_spd};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn zero_width_box_is_plain_ridge() {
        let c0 = random_spd(4, 1);
        let b0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0]);
        let p = SaddleProblem::from_box(&c0, &DMatrix::from_element(4, 4, 0.3), &b0, &DVector::from_element(4, 0.1), 0.0, 0.5)
            .unwrap();
        let (state, report) = pga_solve(&p, &AscentOptions::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert_eq!(state.theta, ridge_solve(&c0, &b0, 0.5).unwrap());
    }

    #[test]
    fn ascent_is_monotone_and_feasible_on_fixture() {
        let p = near_singular_fixture(1.0);
        let (state, report) = pga_solve(&p, &AscentOptions::default()).unwrap();
        for w in report.g_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        assert!(p.bounds.contains(&state.c, &state.b, 0.0));
        assert!(report.converged);
        // saddle certificate: theta optimal for (C, b) and (C, b) a fixed point of one more step
        let r = (crate::linalg::symmetric_part(&state.c) + DMatrix::identity(3, 3)) * &state.theta - &state.b;
        assert!(r.norm() < 1e-10);
        assert!(p.ascent_residual(&state.c, &state.b, 0.5).unwrap() < 1e-3);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let p = near_singular_fixture(1.0);
        let opts = AscentOptions { max_iter: 0, ..Default::default() };
        assert!(pga_solve(&p, &opts).is_err());
        let opts = AscentOptions { step: Some(-1.0), ..Default::default() };
        assert!(pga_solve(&p, &opts).is_err());
    }
}
