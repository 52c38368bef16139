//! PSD-constrained robust regression through the dual of the inner
//! maximisation, solved by ADMM.
//!
//! For fixed `theta` the inner problem `max theta' C theta - 2 b' theta` over
//! the box intersected with the PSD cone has the dual
//!
//! ```text
//! min  -<b_lo, d> + <b_hi, e> - <C_lo, A> + <C_hi, B> + lambda |theta|^2
//! s.t. B - A = G,  2 theta - d + e = 0,  A, B, d, e >= 0,  G >= theta theta'
//! ```
//!
//! which is split into the blocks `(theta, d, e, G, A', B')` and
//! `(d', e', theta', A, B)` with consensus constraints `A = A'`, `B = B'`,
//! `d = d'`, `e = e'`, `theta = theta'`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen};
use crate::regression::{ridge_solve, BoxBounds, SaddleProblem, SaddleState, SolverReport};

pub use crate::linalg::psd_project;

pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_MAX_ITER: usize = 20_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iter: usize,
    /// Stop once the summed constraint violation drops to this value.
    pub tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOLERANCE,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Solution of `min |x - alpha|^2` subject to `x x' <= G` (Loewner order).
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidProjection {
    pub point: DVector<f64>,
    /// Multiplier of the constraint; zero when `alpha` is feasible.
    pub mu: f64,
}

const ZERO_EIGEN: f64 = 1e-12;

/// Projects `alpha` onto `{x : x x' <= G}`.
///
/// With `G = U diag(l) U'` and `g = U' alpha`, the constraint reads
/// `sum x_i^2 / l_i <= 1` in eigen coordinates. If `alpha` violates it, the
/// solution is `x_i = g_i l_i / (l_i + mu)` with `mu > 0` chosen by bisection
/// so that the constraint is tight. Directions with a zero eigenvalue are
/// forced to zero.
pub fn ellipsoid_project(alpha: &DVector<f64>, g: &DMatrix<f64>) -> Result<EllipsoidProjection> {
    let d = alpha.len();
    if g.shape() != (d, d) {
        return Err(Error::Dimension(format!("G is {}x{}, alpha has {d}", g.nrows(), g.ncols())));
    }
    if alpha.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ellipsoid_project input".into()));
    }
    let eig = sym_eigen(g);
    let scale = eig.eigenvalues.amax().max(1.0);
    let lo = eig.eigenvalues.min();
    if lo < -1e-8 * scale {
        return Err(Error::NotPsd(lo));
    }
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|&l| if l <= ZERO_EIGEN * scale { 0.0 } else { l }).collect();
    let gam = eig.eigenvectors.transpose() * alpha;

    let h = |mu: f64| -> f64 {
        lam.iter()
            .zip(gam.iter())
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, g)| g * g * l / ((l + mu) * (l + mu)))
            .sum()
    };
    let beta_at = |mu: f64| -> DVector<f64> {
        DVector::from_iterator(
            d,
            lam.iter().zip(gam.iter()).map(|(&l, &g)| if l > 0.0 { g * l / (l + mu) } else { 0.0 }),
        )
    };

    let mu = if h(0.0) <= 1.0 {
        0.0
    } else {
        let mut hi = 1.0;
        while h(hi) >= 1.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = h(mid);
            if (v - 1.0).abs() <= 1e-12 {
                hi = mid;
                break;
            }
            if v > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        // the upper end of the bracket is always feasible
        hi
    };
    let beta = beta_at(mu);
    Ok(EllipsoidProjection {
        point: &eig.eigenvectors * beta,
        mu,
    })
}

/// All primal blocks and multipliers of the split dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub theta: DVector<f64>,
    pub d: DVector<f64>,
    pub e: DVector<f64>,
    pub g: DMatrix<f64>,
    pub a_aux: DMatrix<f64>,
    pub b_aux: DMatrix<f64>,
    pub d_aux: DVector<f64>,
    pub e_aux: DVector<f64>,
    pub theta_aux: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub m_a: DMatrix<f64>,
    pub m_b: DMatrix<f64>,
    pub mu_d: DVector<f64>,
    pub mu_e: DVector<f64>,
    pub mu_theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

impl DualState {
    pub fn zeros(dim: usize) -> Self {
        let v = DVector::zeros(dim);
        let m = DMatrix::zeros(dim, dim);
        Self {
            theta: v.clone(),
            d: v.clone(),
            e: v.clone(),
            g: m.clone(),
            a_aux: m.clone(),
            b_aux: m.clone(),
            d_aux: v.clone(),
            e_aux: v.clone(),
            theta_aux: v.clone(),
            a: m.clone(),
            b: m.clone(),
            m_a: m.clone(),
            m_b: m.clone(),
            mu_d: v.clone(),
            mu_e: v.clone(),
            mu_theta: v.clone(),
            eta: v,
            gamma: m,
        }
    }

    /// A point consistent with the primal `(C, b)`: `theta` the ridge solution,
    /// `G = theta theta'` split into its positive and negative parts, and
    /// multipliers `Gamma = -C`, `eta = -b` with the bound multipliers that
    /// make every block stationary. Starting from all zeros instead leaves
    /// ADMM stuck at `theta = 0`, since `G = 0` and `theta' = 0` support
    /// each other.
    pub fn warm_start(problem: &SaddleProblem, c: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let lambda = problem.lambda;
        let bounds = &problem.bounds;
        let theta = ridge_solve(c, b, lambda)?;
        let tt = &theta * theta.transpose();
        let pos = tt.map(|v| v.max(0.0));
        let neg = tt.map(|v| (-v).max(0.0));
        let d = theta.map(|v| (2.0 * v).max(0.0));
        let e = theta.map(|v| (-2.0 * v).max(0.0));
        Ok(Self {
            theta: theta.clone(),
            d: d.clone(),
            e: e.clone(),
            g: tt,
            a_aux: neg.clone(),
            b_aux: pos.clone(),
            d_aux: d,
            e_aux: e,
            theta_aux: theta.clone(),
            a: neg,
            b: pos,
            m_a: (&bounds.c_lo - c).map(|v| v.min(0.0)),
            m_b: (c - &bounds.c_hi).map(|v| v.min(0.0)),
            mu_d: (&bounds.b_lo - b).map(|v| v.min(0.0)),
            mu_e: (b - &bounds.b_hi).map(|v| v.min(0.0)),
            mu_theta: b * 2.0 - &theta * (2.0 * lambda),
            eta: -b,
            gamma: -c,
        })
    }

    /// Sum of the norms of all equality-constraint violations.
    pub fn residual(&self) -> f64 {
        (&self.a - &self.a_aux).norm()
            + (&self.b - &self.b_aux).norm()
            + (&self.d - &self.d_aux).norm()
            + (&self.e - &self.e_aux).norm()
            + (&self.theta - &self.theta_aux).norm()
            + (&self.theta * 2.0 - &self.d + &self.e).norm()
            + (&self.b - &self.a - &self.g).norm()
    }

    /// Dual objective `-<b_lo, d> + <b_hi, e> - <C_lo, A> + <C_hi, B> + lambda |theta|^2`.
    pub fn objective(&self, bounds: &BoxBounds, lambda: f64) -> f64 {
        -bounds.b_lo.dot(&self.d) + bounds.b_hi.dot(&self.e) - bounds.c_lo.dot(&self.a) + bounds.c_hi.dot(&self.b)
            + lambda * self.theta.norm_squared()
    }

    /// Worst-case `(C, b)` read off the multipliers of `B - A = G` and
    /// `2 theta - d + e = 0`, clamped into the box.
    pub fn recover_primal(&self, bounds: &BoxBounds) -> (DMatrix<f64>, DVector<f64>) {
        (bounds.project_c(&(-&self.gamma)), bounds.project_b(&(-&self.eta)))
    }

    fn is_finite(&self) -> bool {
        [&self.theta, &self.d, &self.e, &self.d_aux, &self.e_aux, &self.theta_aux, &self.mu_d, &self.mu_e, &self.mu_theta, &self.eta]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && [&self.g, &self.a_aux, &self.b_aux, &self.a, &self.b, &self.m_a, &self.m_b, &self.gamma]
                .iter()
                .all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// Closed-form minimiser of the augmented Lagrangian over `(theta, d, e)`.
///
/// Stationarity gives the 3x3 block system (per coordinate)
/// `[2l+5r, -2r, 2r; -2r, 2r, -r; 2r, -r, 2r] (theta, d, e) = (c3, c1, c2)`
/// whose determinant is `r^2 (6l + 7r)`.
pub fn theta_block(s: &DualState, bounds: &BoxBounds, lambda: f64, rho: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let c1 = &bounds.b_lo - &s.mu_d + &s.d_aux * rho + &s.eta;
    let c2 = -&bounds.b_hi - &s.mu_e + &s.e_aux * rho - &s.eta;
    let c3 = -&s.mu_theta + &s.theta_aux * rho - &s.eta * 2.0;
    let den = 6.0 * lambda + 7.0 * rho;
    let theta = (&c1 * 2.0 - &c2 * 2.0 + &c3 * 3.0) / den;
    let p = 6.0 * rho + 4.0 * lambda;
    let q = rho + 2.0 * lambda;
    let d = (&c1 * p + &c2 * q + &c3 * (2.0 * rho)) / (rho * den);
    let e = (&c1 * q + &c2 * p - &c3 * (2.0 * rho)) / (rho * den);
    (theta, d, e)
}

/// Closed-form minimiser over `(A, B)` given `A'`, `B'`, `G`.
pub fn ab_block(
    a_aux: &DMatrix<f64>,
    b_aux: &DMatrix<f64>,
    g: &DMatrix<f64>,
    s: &DualState,
    bounds: &BoxBounds,
    rho: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d1 = a_aux * rho - g * rho + &s.gamma - &s.m_a + &bounds.c_lo;
    let d2 = b_aux * rho + g * rho - &s.gamma - &s.m_b - &bounds.c_hi;
    let a = (&d1 * 2.0 + &d2) / (3.0 * rho);
    let b = (&d1 + &d2 * 2.0) / (3.0 * rho);
    (a, b)
}

/// One ADMM sweep: the `(theta, d, e, G, A', B')` block, then the
/// `(d', e', theta', A, B)` block using the fresh first block, then all
/// seven multiplier updates.
pub fn admm_step(s: &DualState, bounds: &BoxBounds, lambda: f64, rho: f64) -> Result<DualState> {
    let (theta, d, e) = theta_block(s, bounds, lambda, rho);
    let a_aux = (&s.a + &s.m_a / rho).map(|v| v.max(0.0));
    let b_aux = (&s.b + &s.m_b / rho).map(|v| v.max(0.0));
    let tt = &s.theta_aux * s.theta_aux.transpose();
    let g = linalg::psd_project_sym_part(&(&s.b - &s.a + &s.gamma / rho - &tt)) + tt;

    let d_aux = (&d + &s.mu_d / rho).map(|v| v.max(0.0));
    let e_aux = (&e + &s.mu_e / rho).map(|v| v.max(0.0));
    let theta_aux = ellipsoid_project(&(&theta + &s.mu_theta / rho), &g)?.point;
    let (a, b) = ab_block(&a_aux, &b_aux, &g, s, bounds, rho);

    let next = DualState {
        m_a: &s.m_a + (&a - &a_aux) * rho,
        m_b: &s.m_b + (&b - &b_aux) * rho,
        mu_d: &s.mu_d + (&d - &d_aux) * rho,
        mu_e: &s.mu_e + (&e - &e_aux) * rho,
        mu_theta: &s.mu_theta + (&theta - &theta_aux) * rho,
        eta: &s.eta + (&theta * 2.0 - &d + &e) * rho,
        gamma: &s.gamma + (&b - &a - &g) * rho,
        theta,
        d,
        e,
        g,
        a_aux,
        b_aux,
        d_aux,
        e_aux,
        theta_aux,
        a,
        b,
    };
    Ok(next)
}

/// Everything an ADMM run produces.
#[derive(Debug, Clone)]
pub struct AdmmRun {
    /// `theta` re-solved at the recovered worst-case `(C, b)`.
    pub state: SaddleState,
    pub report: SolverReport,
    pub dual: DualState,
}

/// Runs ADMM from the problem's start point until the summed constraint
/// violation reaches `cfg.tol` or `cfg.max_iter` sweeps.
pub fn admm_solve(problem: &SaddleProblem, cfg: &AdmmConfig) -> Result<(SaddleState, SolverReport)> {
    let run = admm_run(problem, cfg)?;
    Ok((run.state, run.report))
}

pub fn admm_run(problem: &SaddleProblem, cfg: &AdmmConfig) -> Result<AdmmRun> {
    cfg.validate()?;
    let start = Instant::now();
    let lambda = problem.lambda;
    let bounds = &problem.bounds;
    let mut s = DualState::warm_start(problem, &problem.c_start, &problem.b_start)?;
    let mut report = SolverReport::new("admm");
    let mut converged = false;
    for t in 1..=cfg.max_iter {
        s = admm_step(&s, bounds, lambda, cfg.rho).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { iteration: t },
            other => other,
        })?;
        if !s.is_finite() {
            return Err(Error::Divergence { iteration: t });
        }
        let r = s.residual();
        report.push(s.objective(bounds, lambda), r);
        if r <= cfg.tol {
            converged = true;
            break;
        }
    }
    report.finish(converged, start.elapsed());
    let (c, b) = s.recover_primal(bounds);
    let state = SaddleState::at(c, b, lambda)?;
    Ok(AdmmRun { state, report, dual: s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{near_singular_fixture, pga_solve, AscentOptions};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_dual(d: usize, seed: u64) -> DualState {
        let mut r = rng(seed);
        let mut v = || DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0));
        let mut s = DualState::zeros(d);
        s.d_aux = v();
        s.e_aux = v();
        s.theta_aux = v();
        s.mu_d = v();
        s.mu_e = v();
        s.mu_theta = v();
        s.eta = v();
        s
    }

    #[test]
    fn theta_block_solves_its_stationarity_system() {
        let fixture = near_singular_fixture(0.7);
        for (seed, (lambda, rho)) in [(0.7, 1.0), (0.1, 0.5), (3.0, 2.0)].into_iter().enumerate() {
            let s = random_dual(3, seed as u64);
            let (theta, d, e) = theta_block(&s, &fixture.bounds, lambda, rho);
            let b = &fixture.bounds;
            let c1 = &b.b_lo - &s.mu_d + &s.d_aux * rho + &s.eta;
            let c2 = -&b.b_hi - &s.mu_e + &s.e_aux * rho - &s.eta;
            let c3 = -&s.mu_theta + &s.theta_aux * rho - &s.eta * 2.0;
            let k = DMatrix::from_row_slice(
                3,
                3,
                &[2.0 * lambda + 5.0 * rho, -2.0 * rho, 2.0 * rho, -2.0 * rho, 2.0 * rho, -rho, 2.0 * rho, -rho, 2.0 * rho],
            );
            for i in 0..3 {
                let rhs = DVector::from_vec(vec![c3[i], c1[i], c2[i]]);
                let dense = k.clone().lu().solve(&rhs).unwrap();
                assert_relative_eq!(theta[i], dense[0], epsilon = 1e-10, max_relative = 1e-10);
                assert_relative_eq!(d[i], dense[1], epsilon = 1e-10, max_relative = 1e-10);
                assert_relative_eq!(e[i], dense[2], epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn theta_block_minimises_augmented_lagrangian() {
        // perturbing the closed-form point in any coordinate must not decrease the block objective
        let p = near_singular_fixture(1.0);
        let s = random_dual(3, 9);
        let (lambda, rho) = (1.0, 1.3);
        let f = |t: &DVector<f64>, d: &DVector<f64>, e: &DVector<f64>| {
            let b = &p.bounds;
            -b.b_lo.dot(d) + b.b_hi.dot(e) + lambda * t.norm_squared()
                + s.mu_d.dot(&(d - &s.d_aux)) + rho / 2.0 * (d - &s.d_aux).norm_squared()
                + s.mu_e.dot(&(e - &s.e_aux)) + rho / 2.0 * (e - &s.e_aux).norm_squared()
                + s.mu_theta.dot(&(t - &s.theta_aux)) + rho / 2.0 * (t - &s.theta_aux).norm_squared()
                + s.eta.dot(&(t * 2.0 - d + e)) + rho / 2.0 * (t * 2.0 - d + e).norm_squared()
        };
        let (t, d, e) = theta_block(&s, &p.bounds, lambda, rho);
        let base = f(&t, &d, &e);
        for k in 0..9 {
            for h in [-1e-3, 1e-3] {
                let (mut t2, mut d2, mut e2) = (t.clone(), d.clone(), e.clone());
                match k / 3 {
                    0 => t2[k % 3] += h,
                    1 => d2[k % 3] += h,
                    _ => e2[k % 3] += h,
                }
                assert!(f(&t2, &d2, &e2) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn ab_block_solves_its_stationarity_system() {
        let p = near_singular_fixture(1.0);
        let mut r = rng(4);
        let mut m = || DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0));
        let mut s = DualState::zeros(3);
        s.gamma = m();
        s.m_a = m();
        s.m_b = m();
        let (a_aux, b_aux, g) = (m(), m(), m());
        let rho = 0.8;
        let (a, b) = ab_block(&a_aux, &b_aux, &g, &s, &p.bounds, rho);
        let grad_a = -&p.bounds.c_lo + &s.m_a + (&a - &a_aux) * rho - &s.gamma - (&b - &a - &g) * rho;
        let grad_b = &p.bounds.c_hi + &s.m_b + (&b - &b_aux) * rho + &s.gamma + (&b - &a - &g) * rho;
        assert!(grad_a.amax() < 1e-12 && grad_b.amax() < 1e-12);
    }

    #[test]
    fn ellipsoid_reference_cases() {
        let alpha = DVector::from_vec(vec![1.2, -1.6]);
        let out = ellipsoid_project(&alpha, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(out.point, &alpha / 2.0, epsilon = 1e-10);

        let inside = DVector::from_vec(vec![0.3, 0.2]);
        let out = ellipsoid_project(&inside, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(out.mu, 0.0);
        assert_relative_eq!(out.point, inside, epsilon = 1e-15);

        assert!(matches!(
            ellipsoid_project(&inside, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))),
            Err(Error::NotPsd(_))
        ));
    }

    #[test]
    fn ellipsoid_matches_grid_search() {
        // G = diag(4, 1), alpha = (4, 4): solve sum g^2 l / (l + mu)^2 = 1 by a dense grid
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let alpha = DVector::from_vec(vec![4.0, 4.0]);
        let out = ellipsoid_project(&alpha, &g).unwrap();
        let h = |mu: f64| 16.0 * 4.0 / (4.0 + mu).powi(2) + 16.0 / (1.0 + mu).powi(2);
        let mut best = (f64::INFINITY, 0.0);
        let n = 1_000_000;
        for i in 0..=n {
            let mu = 1e3 * i as f64 / n as f64;
            let gap = (h(mu) - 1.0).abs();
            if gap < best.0 {
                best = (gap, mu);
            }
        }
        // refine around the best grid point
        let (mut lo, mut hi) = (best.1 - 1e-3, best.1 + 1e-3);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 1.0 { lo = mid } else { hi = mid }
        }
        let mu = 0.5 * (lo + hi);
        assert!((out.mu - mu).abs() < 1e-5);
        let expected = DVector::from_vec(vec![4.0 * 4.0 / (4.0 + mu), 4.0 / (1.0 + mu)]);
        assert_relative_eq!(out.point, expected, epsilon = 1e-5);
    }

    #[test]
    fn ellipsoid_zero_eigen_direction_is_dropped() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let out = ellipsoid_project(&DVector::from_vec(vec![0.5, 3.0]), &g).unwrap();
        assert_relative_eq!(out.point, DVector::from_vec(vec![0.5, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn multipliers_follow_residuals_after_one_step_from_zero() {
        let c0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = SaddleProblem::from_box(
            &c0,
            &DMatrix::from_element(2, 2, 0.1),
            &DVector::from_vec(vec![1.0, -1.0]),
            &DVector::from_element(2, 0.1),
            1.0,
            0.5,
        )
        .unwrap();
        let rho = 0.7;
        let z = DualState::zeros(2);
        let s = admm_step(&z, &p.bounds, 0.5, rho).unwrap();
        assert_relative_eq!(s.m_a, (&s.a - &s.a_aux) * rho, epsilon = 1e-14);
        assert_relative_eq!(s.m_b, (&s.b - &s.b_aux) * rho, epsilon = 1e-14);
        assert_relative_eq!(s.mu_d, (&s.d - &s.d_aux) * rho, epsilon = 1e-14);
        assert_relative_eq!(s.mu_e, (&s.e - &s.e_aux) * rho, epsilon = 1e-14);
        assert_relative_eq!(s.mu_theta, (&s.theta - &s.theta_aux) * rho, epsilon = 1e-14);
        assert_relative_eq!(s.eta, (&s.theta * 2.0 - &s.d + &s.e) * rho, epsilon = 1e-14);
        assert_relative_eq!(s.gamma, (&s.b - &s.a - &s.g) * rho, epsilon = 1e-14);
    }

    #[test]
    fn step_invariants_hold_along_a_run() {
        let p = near_singular_fixture(1.0);
        let mut s = DualState::warm_start(&p, &p.c_start, &p.b_start).unwrap();
        for _ in 0..300 {
            s = admm_step(&s, &p.bounds, 1.0, 1.0).unwrap();
            assert!(s.a_aux.min() >= 0.0 && s.b_aux.min() >= 0.0);
            assert!(s.d_aux.min() >= 0.0 && s.e_aux.min() >= 0.0);
            let h = &s.g - &s.theta_aux * s.theta_aux.transpose();
            assert!(linalg::min_eigenvalue(&h) >= -1e-8);
        }
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let p = near_singular_fixture(1.0);
        let cfg = AdmmConfig { tol: 1e-11, ..Default::default() };
        let run = admm_run(&p, &cfg).unwrap();
        assert!(run.report.converged);
        let next = admm_step(&run.dual, &p.bounds, 1.0, 1.0).unwrap();
        assert!((&next.theta - &run.dual.theta).amax() <= 1e-8);
        assert!((&next.g - &run.dual.g).amax() <= 1e-8);
        assert!((&next.gamma - &run.dual.gamma).amax() <= 1e-8);
        assert!((&next.eta - &run.dual.eta).amax() <= 1e-8);
    }

    #[test]
    fn fixture_converges_and_matches_relaxed_optimum() {
        let p = near_singular_fixture(1.0);
        let (state, report) = admm_solve(&p, &AdmmConfig { max_iter: 5000, tol: 1e-5, rho: 1.0 }).unwrap();
        assert!(report.converged);
        assert!(*report.residual_trace.last().unwrap() <= 1e-5);
        // the relaxed optimum is already PSD here, so both solvers share g*
        let (pga, _) = pga_solve(&p, &AscentOptions::default()).unwrap();
        assert!((state.g() - pga.g()).abs() < 1e-3, "{} vs {}", state.g(), pga.g());
        assert!(p.bounds.contains(&state.c, &state.b, 0.0));
    }

    #[test]
    fn zero_width_psd_box_is_plain_ridge() {
        let c0 = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let b0 = DVector::from_vec(vec![0.5, -1.0, 0.25]);
        let p = SaddleProblem::from_box(&c0, &DMatrix::from_element(3, 3, 1.0), &b0, &DVector::from_element(3, 1.0), 0.0, 0.3)
            .unwrap();
        let (state, _) = admm_solve(&p, &AdmmConfig::default()).unwrap();
        let ridge = ridge_solve(&c0, &b0, 0.3).unwrap();
        assert!((&state.theta - &ridge).norm() <= 1e-5 * ridge.norm());
    }

    #[test]
    fn dual_objective_bounds_psd_restricted_maximum() {
        // 2x2: grid over the box restricted to PSD matrices
        let c0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let delta = DMatrix::from_element(2, 2, 0.2);
        let b0 = DVector::from_vec(vec![0.8, -0.3]);
        let bd = DVector::from_element(2, 0.1);
        let lambda = 0.2;
        let p = SaddleProblem::from_box(&c0, &delta, &b0, &bd, 1.0, lambda).unwrap();
        let run = admm_run(&p, &AdmmConfig { tol: 1e-9, ..Default::default() }).unwrap();
        let dual = run.dual.objective(&p.bounds, lambda);

        let steps = 12;
        let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / steps as f64;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let c11 = lin(0.8, 1.2, i);
                    let c22 = lin(0.8, 1.2, j);
                    let c12 = lin(0.7, 1.1, k);
                    if c11 * c22 - c12 * c12 < 0.0 {
                        continue;
                    }
                    let c = DMatrix::from_row_slice(2, 2, &[c11, c12, c12, c22]);
                    for u in 0..=4 {
                        for v in 0..=4 {
                            let b = DVector::from_vec(vec![lin(0.7, 0.9, u * 3), lin(-0.4, -0.2, v * 3)]);
                            best = best.max(crate::regression::eval_g(&c, &b, lambda).unwrap());
                        }
                    }
                }
            }
        }
        assert!(dual >= best - 1e-3, "dual {dual} vs grid {best}");
    }
}
