//! Box-relaxed robust ridge regression.
//!
//! The learner solves
//!
//! ```text
//! min_theta  max_{C in [C_lo, C_hi], b in [b_lo, b_hi]}  theta' C theta - 2 b' theta + lambda |theta|^2
//! ```
//!
//! The inner minimum is available in closed form, which leaves the concave
//! maximisation of `g(C, b) = -b' (C + lambda I)^-1 b` over a box. No PSD
//! constraint is imposed on `C` here; see [`crate::admm`] for that.

mod nesterov;
mod pga;

use std::io::Write;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_dense};
use crate::moments::MomentEnvelope;

pub use nesterov::{momentum_sequence, nesterov_solve};
pub use pga::pga_solve;

pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// `(C + lambda I)^-1 b`, using the symmetric part of `C`.
pub fn ridge_solve(c: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let d = b.len();
    if c.shape() != (d, d) {
        return Err(Error::Dimension(format!("C is {}x{}, b has {}", c.nrows(), c.ncols(), d)));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if c.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge_solve input".into()));
    }
    let m = linalg::symmetric_part(c) + DMatrix::identity(d, d) * lambda;
    linalg::solve_spd(&m, b)
}

/// Inner minimum `min_theta theta' C theta - 2 b' theta + lambda |theta|^2`.
pub fn eval_g(c: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<f64> {
    let theta = ridge_solve(c, b, lambda)?;
    Ok(-b.dot(&theta))
}

/// The ridge objective at an arbitrary `theta`.
pub fn objective(theta: &DVector<f64>, c: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    (theta.transpose() * c * theta)[(0, 0)] - 2.0 * b.dot(theta) + lambda * theta.norm_squared()
}

/// Entrywise clamp of `m` into `[m0 - radius, m0 + radius]`.
pub fn box_project(m: &DMatrix<f64>, m0: &DMatrix<f64>, radius: &DMatrix<f64>) -> DMatrix<f64> {
    let lo = m0 - radius;
    let hi = m0 + radius;
    clamp_matrix(m, &lo, &hi)
}

fn clamp_matrix(m: &DMatrix<f64>, lo: &DMatrix<f64>, hi: &DMatrix<f64>) -> DMatrix<f64> {
    m.zip_zip_map(lo, hi, |v, l, h| v.max(l).min(h))
}

fn clamp_vector(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    v.zip_zip_map(lo, hi, |x, l, h| x.max(l).min(h))
}

/// Entrywise bounds on `C` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    #[serde(with = "serde_dense::matrix")]
    pub c_lo: DMatrix<f64>,
    #[serde(with = "serde_dense::matrix")]
    pub c_hi: DMatrix<f64>,
    #[serde(with = "serde_dense::vector")]
    pub b_lo: DVector<f64>,
    #[serde(with = "serde_dense::vector")]
    pub b_hi: DVector<f64>,
}

impl BoxBounds {
    pub fn new(c_lo: DMatrix<f64>, c_hi: DMatrix<f64>, b_lo: DVector<f64>, b_hi: DVector<f64>) -> Result<Self> {
        let d = b_lo.len();
        if c_lo.shape() != (d, d) || c_hi.shape() != (d, d) || b_hi.len() != d {
            return Err(Error::Dimension("box bound shapes disagree".into()));
        }
        let bad_c = c_lo.iter().zip(c_hi.iter()).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite());
        let bad_b = b_lo.iter().zip(b_hi.iter()).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite());
        if bad_c || bad_b {
            return Err(Error::InvalidParameter("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { c_lo, c_hi, b_lo, b_hi })
    }

    /// `[c0 - c * delta, c0 + c * delta]` and likewise for `b`.
    pub fn centered(
        c0: &DMatrix<f64>,
        delta: &DMatrix<f64>,
        b0: &DVector<f64>,
        b_delta: &DVector<f64>,
        c: f64,
    ) -> Result<Self> {
        Self::new(c0 - delta * c, c0 + delta * c, b0 - b_delta * c, b0 + b_delta * c)
    }

    pub fn from_envelope(env: &MomentEnvelope) -> Result<Self> {
        Self::new(env.c_min(), env.c_max(), env.b_min(), env.b_max())
    }

    pub fn dim(&self) -> usize {
        self.b_lo.len()
    }

    pub fn project_c(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        clamp_matrix(c, &self.c_lo, &self.c_hi)
    }

    pub fn project_b(&self, b: &DVector<f64>) -> DVector<f64> {
        clamp_vector(b, &self.b_lo, &self.b_hi)
    }

    /// Whether `(C, b)` lies in the box up to `tol`.
    pub fn contains(&self, c: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> bool {
        let c_ok = c
            .iter()
            .zip(self.c_lo.iter().zip(self.c_hi.iter()))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol);
        let b_ok = b
            .iter()
            .zip(self.b_lo.iter().zip(self.b_hi.iter()))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol);
        c_ok && b_ok
    }
}

/// A box together with the ridge coefficient and an ascent start point.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleProblem {
    pub bounds: BoxBounds,
    pub c_start: DMatrix<f64>,
    pub b_start: DVector<f64>,
    pub lambda: f64,
}

impl SaddleProblem {
    /// Start point is the box centre `(c0, b0)` projected into the box.
    pub fn new(bounds: BoxBounds, c0: DMatrix<f64>, b0: DVector<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        if c0.shape() != bounds.c_lo.shape() || b0.len() != bounds.dim() {
            return Err(Error::Dimension("start point does not match the box".into()));
        }
        let c_start = bounds.project_c(&c0);
        let b_start = bounds.project_b(&b0);
        Ok(Self {
            bounds,
            c_start,
            b_start,
            lambda,
        })
    }

    pub fn from_envelope(env: &MomentEnvelope, lambda: f64) -> Result<Self> {
        Self::new(BoxBounds::from_envelope(env)?, env.c0.clone(), env.b0.clone(), lambda)
    }

    pub fn from_box(
        c0: &DMatrix<f64>,
        delta: &DMatrix<f64>,
        b0: &DVector<f64>,
        b_delta: &DVector<f64>,
        c: f64,
        lambda: f64,
    ) -> Result<Self> {
        let bounds = BoxBounds::centered(c0, delta, b0, b_delta, c)?;
        Self::new(bounds, c0.clone(), b0.clone(), lambda)
    }

    /// Replace the start point; it is projected into the box.
    pub fn with_start(mut self, c: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if c.shape() != self.c_start.shape() || b.len() != self.b_start.len() {
            return Err(Error::Dimension("start point does not match the box".into()));
        }
        self.c_start = self.bounds.project_c(&c);
        self.b_start = self.bounds.project_b(&b);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Norm of the projected-gradient step from `(C, b)` with step `alpha`,
    /// divided by `alpha`. Zero exactly at a maximiser of `g` over the box.
    pub fn ascent_residual(&self, c: &DMatrix<f64>, b: &DVector<f64>, alpha: f64) -> Result<f64> {
        let theta = ridge_solve(c, b, self.lambda)?;
        let c_next = self.bounds.project_c(&(c + &theta * theta.transpose() * alpha));
        let b_next = self.bounds.project_b(&(b - &theta * (2.0 * alpha)));
        Ok(((c_next - c).norm_squared() + (b_next - b).norm_squared()).sqrt() / alpha)
    }
}

/// The three-feature, nearly singular box (`C` has eigenvalues around 0.36,
/// 0.50 and 201) on which dropping the PSD constraint matters most.
pub fn near_singular_fixture(lambda: f64) -> SaddleProblem {
    SaddleProblem::from_envelope(&near_singular_envelope(), lambda).expect("fixture is well formed")
}

/// [`near_singular_fixture`] as an envelope with features `x0..x2`.
pub fn near_singular_envelope() -> MomentEnvelope {
    let c = DMatrix::from_row_slice(3, 3, &[97.0, 40.0, 92.0, 40.0, 17.0, 38.0, 92.0, 38.0, 88.0]);
    let delta = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.2, 0.3, 0.1, 0.2, 0.1, 0.3, 0.1]);
    let b = DVector::from_vec(vec![6.65, 8.97, 5.40]);
    let b_delta = DVector::from_vec(vec![0.1, 0.2, 0.2]);
    let names = (0..3).map(|i| format!("x{i}")).collect();
    MomentEnvelope::from_box(c, delta, b, b_delta, 1.0, names).expect("fixture is well formed")
}

/// `(theta, C, b)` at the end of a solve; `theta` minimises the ridge
/// objective for the returned `(C, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleState {
    #[serde(with = "serde_dense::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "serde_dense::matrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_dense::vector")]
    pub b: DVector<f64>,
    pub lambda: f64,
}

impl SaddleState {
    pub fn at(c: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<Self> {
        let theta = ridge_solve(&c, &b, lambda)?;
        Ok(Self { theta, c, b, lambda })
    }

    pub fn g(&self) -> f64 {
        -self.b.dot(&self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// Step size; `None` uses `lambda / 2`, the inverse of the Lipschitz
    /// constant `2 / lambda` of the gradient of `g`.
    pub step: Option<f64>,
    /// Stop once the per-iteration change in `g` drops below
    /// `tol * max(1, |g|)`. Zero disables the test.
    pub tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            step: None,
            tol: DEFAULT_TOLERANCE,
        }
    }
}

impl AscentOptions {
    pub(crate) fn step_for(&self, lambda: f64) -> Result<f64> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        let alpha = self.step.unwrap_or(lambda / 2.0);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {alpha}")));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be nonnegative".into()));
        }
        Ok(alpha)
    }
}

/// Per-iteration trace of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub iterations: usize,
    pub converged: bool,
    /// Objective per iteration: `g` for the ascent solvers, the dual
    /// objective for ADMM.
    pub g_trace: Vec<f64>,
    /// Gradient-mapping norm for the ascent solvers, summed constraint
    /// violation for ADMM.
    pub residual_trace: Vec<f64>,
    /// Change in the objective over the last iteration.
    pub final_gap: f64,
    pub wall_time_secs: f64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    solver: &'a str,
    iteration: usize,
    objective: f64,
    residual: f64,
}

impl SolverReport {
    pub(crate) fn new(solver: &str) -> Self {
        Self {
            solver: solver.to_string(),
            iterations: 0,
            converged: false,
            g_trace: Vec::new(),
            residual_trace: Vec::new(),
            final_gap: f64::INFINITY,
            wall_time_secs: 0.0,
        }
    }

    pub(crate) fn push(&mut self, g: f64, residual: f64) {
        if let Some(&prev) = self.g_trace.last() {
            self.final_gap = (g - prev).abs();
        }
        self.g_trace.push(g);
        self.residual_trace.push(residual);
        self.iterations = self.g_trace.len();
    }

    pub(crate) fn finish(&mut self, converged: bool, elapsed: Duration) {
        self.converged = converged;
        self.wall_time_secs = elapsed.as_secs_f64();
    }

    /// One JSON object per iteration: solver, iteration, objective, residual.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (t, (g, r)) in self.g_trace.iter().zip(&self.residual_trace).enumerate() {
            let line = TraceLine {
                solver: &self.solver,
                iteration: t + 1,
                objective: *g,
                residual: *r,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }

    /// First iteration (1-based) whose objective is within `eps` of `target`.
    pub fn iterations_to(&self, target: f64, eps: f64) -> Option<usize> {
        self.g_trace.iter().position(|&g| target - g <= eps).map(|t| t + 1)
    }
}

pub(crate) fn check_finite(iteration: usize, c: &DMatrix<f64>, b: &DVector<f64>) -> Result<()> {
    if c.iter().chain(b.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration })
    }
}
