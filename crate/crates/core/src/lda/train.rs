//! Gradient training of the robust discriminant.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc::{loss_grad_from_draws, standard_normal_draws};
use super::simplex::simplex_bisection;
use super::{check_labels, worst_case_mean_for, ClassBox, ClassMoments, LdaConfig, LdaModel, Standardizer};
use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

const TAG_MC: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaTrace {
    /// `max_i f_i + max_j g_j` at the start of each iteration.
    pub objective: Vec<f64>,
    /// Loss-and-gradient evaluations per iteration.
    pub gradient_calls: Vec<usize>,
    /// Simplex weights of the last iteration.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LdaFit {
    pub model: LdaModel,
    pub trace: LdaTrace,
}

/// One class in the (optionally bias-augmented) training coordinates.
struct ClassProblem {
    label: u8,
    prior: f64,
    mu_min: DVector<f64>,
    mu_max: DVector<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl ClassProblem {
    fn new(label: u8, prior: f64, class: &ClassBox, intercept: bool) -> Result<Self> {
        let d = class.mu_min.len();
        let dim = d + usize::from(intercept);
        let pad = |v: &DVector<f64>| DVector::from_fn(dim, |i, _| if i < d { v[i] } else { 1.0 });
        let factors = class
            .sigmas
            .iter()
            .map(|s| linalg::psd_factor(&DMatrix::from_fn(dim, dim, |i, j| if i < d && j < d { s[(i, j)] } else { 0.0 })))
            .collect::<Result<_>>()?;
        Ok(Self {
            label,
            prior,
            mu_min: pad(&class.mu_min),
            mu_max: pad(&class.mu_max),
            factors,
        })
    }

    /// Loss and gradient for every covariance candidate on shared draws.
    fn evaluate(&self, w: &DVector<f64>, z: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
        let mu = worst_case_mean_for(self.label, w, &self.mu_min, &self.mu_max);
        self.factors
            .par_iter()
            .map(|l| loss_grad_from_draws(w, &mu, l, z, self.prior, self.label))
            .collect()
    }
}

fn draws(seed: u64, iteration: usize, label: u8, n_mc: usize, dim: usize) -> DMatrix<f64> {
    let s = rng::derive_seed(rng::derive_seed(seed, TAG_MC), iteration as u64);
    standard_normal_draws(n_mc, dim, rng::derive_seed(s, u64::from(label)))
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Gradient descent on `w` against the regularized worst case over the two
/// covariance sets, starting from `w = 0`. Returns the augmented weights
/// (bias last when `intercept` is set).
fn descend(moments: &ClassMoments, cfg: &LdaConfig) -> Result<(DVector<f64>, LdaTrace)> {
    let c1 = ClassProblem::new(1, moments.pi1, &moments.class1, cfg.intercept)?;
    let c0 = ClassProblem::new(0, moments.pi0, &moments.class0, cfg.intercept)?;
    let dim = c1.mu_min.len();
    let mut w = DVector::zeros(dim);
    let mut trace = LdaTrace {
        objective: Vec::with_capacity(cfg.iterations),
        gradient_calls: Vec::with_capacity(cfg.iterations),
        p: Vec::new(),
        q: Vec::new(),
    };
    for t in 0..cfg.iterations {
        let f_eval = c1.evaluate(&w, &draws(cfg.seed, t, 1, cfg.n_mc, dim));
        let g_eval = c0.evaluate(&w, &draws(cfg.seed, t, 0, cfg.n_mc, dim));
        let f: Vec<f64> = f_eval.iter().map(|e| e.0).collect();
        let g: Vec<f64> = g_eval.iter().map(|e| e.0).collect();
        let reg = |v: &[f64]| cfg.delta.unwrap_or_else(|| (0.1 * max_of(v)).max(1e-12));
        let p = simplex_bisection(&f, reg(&f), cfg.eps)?;
        let q = simplex_bisection(&g, reg(&g), cfg.eps)?;
        trace.objective.push(max_of(&f) + max_of(&g));
        trace.gradient_calls.push(f_eval.len() + g_eval.len());

        let mut grad = DVector::zeros(dim);
        for (pi, (_, gi)) in p.p.iter().zip(&f_eval) {
            grad.axpy(*pi, gi, 1.0);
        }
        for (qj, (_, gj)) in q.p.iter().zip(&g_eval) {
            grad.axpy(*qj, gj, 1.0);
        }
        w.axpy(-cfg.alpha, &grad, 1.0);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: t + 1 });
        }
        trace.p = p.p;
        trace.q = q.p;
    }
    Ok((w, trace))
}

/// `max_i f_i(w) + max_j g_j(w)` at the worst-case means, on the draws of
/// iteration 0 under `seed`. `w` carries the bias last when `intercept` is set.
pub fn robust_objective(moments: &ClassMoments, w: &DVector<f64>, intercept: bool, n_mc: usize, seed: u64) -> Result<f64> {
    let c1 = ClassProblem::new(1, moments.pi1, &moments.class1, intercept)?;
    let c0 = ClassProblem::new(0, moments.pi0, &moments.class0, intercept)?;
    let dim = c1.mu_min.len();
    if w.len() != dim {
        return Err(Error::Dimension(format!("weights of length {} for dimension {dim}", w.len())));
    }
    let f: Vec<f64> = c1.evaluate(w, &draws(seed, 0, 1, n_mc, dim)).into_iter().map(|e| e.0).collect();
    let g: Vec<f64> = c0.evaluate(w, &draws(seed, 0, 0, n_mc, dim)).into_iter().map(|e| e.0).collect();
    Ok(max_of(&f) + max_of(&g))
}

/// Trains on fully labeled rows with priors from the label frequencies.
pub fn rnda_train(x: &MaskedMatrix, labels: &[u8], cfg: &LdaConfig) -> Result<LdaFit> {
    rnda_train_with_priors(x, labels, None, cfg)
}

/// As [`rnda_train`] with optional fixed priors `(pi0, pi1)`.
pub fn rnda_train_with_priors(x: &MaskedMatrix, labels: &[u8], priors: Option<(f64, f64)>, cfg: &LdaConfig) -> Result<LdaFit> {
    cfg.validate()?;
    check_labels(x.nrows(), labels)?;
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.apply(x)?;
    let moments = ClassMoments::estimate(&z, labels, priors, cfg)?;
    let (w_aug, trace) = descend(&moments, cfg)?;
    let d = x.ncols();
    let model = LdaModel {
        feature_names: x.column_names().to_vec(),
        w: w_aug.rows(0, d).into_owned(),
        bias: if cfg.intercept { w_aug[d] } else { 0.0 },
        threshold: 0.5,
        standardizer,
        moments,
        config: *cfg,
    };
    Ok(LdaFit { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{accuracy, apply_mcar, two_gaussians};
    use crate::lda::{class_loss_grad_mc, classify_batch};

    fn small_cfg() -> LdaConfig {
        LdaConfig {
            iterations: 150,
            n_mc: 128,
            alpha: 0.5,
            seed: 3,
            ..LdaConfig::default()
        }
    }

    #[test]
    fn accurate_on_separated_classes_with_missing_cells() {
        let (train, labels) = two_gaussians(400, 3, 5.0, 1);
        let train = apply_mcar(&train, 0.4, 2).unwrap();
        let fit = rnda_train(&train, &labels, &small_cfg()).unwrap();
        let (test, truth) = two_gaussians(400, 3, 5.0, 99);
        let acc = accuracy(&truth, &classify_batch(&fit.model, &test).unwrap()).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");
        assert!(fit.trace.gradient_calls.iter().all(|&c| c == 2 * 5));
    }

    #[test]
    fn single_candidate_matches_plain_descent() {
        let (x, labels) = two_gaussians(120, 2, 3.0, 4);
        let cfg = LdaConfig { k: 1, iterations: 40, ..small_cfg() };
        let fit = rnda_train(&x, &labels, &cfg).unwrap();

        let m = &fit.model.moments;
        let pad = |v: &DVector<f64>| DVector::from_fn(3, |i, _| if i < 2 { v[i] } else { 1.0 });
        let padm = |s: &DMatrix<f64>| DMatrix::from_fn(3, 3, |i, j| if i < 2 && j < 2 { s[(i, j)] } else { 0.0 });
        let mut w = DVector::zeros(3);
        for t in 0..cfg.iterations {
            let mut grad = DVector::zeros(3);
            for (label, class, prior) in [(1u8, &m.class1, m.pi1), (0u8, &m.class0, m.pi0)] {
                let mu = worst_case_mean_for(label, &w, &pad(&class.mu_min), &pad(&class.mu_max));
                let seed = rng::derive_seed(rng::derive_seed(rng::derive_seed(cfg.seed, TAG_MC), t as u64), u64::from(label));
                let (_, g) = class_loss_grad_mc(&w, &mu, &padm(&class.sigmas[0]), prior, label, cfg.n_mc, seed).unwrap();
                grad += g;
            }
            w -= grad * cfg.alpha;
        }
        let got = DVector::from_vec(vec![fit.model.w[0], fit.model.w[1], fit.model.bias]);
        assert!((got - w).amax() < 1e-4);
    }

    #[test]
    fn objective_grows_with_nested_sets() {
        let (x, labels) = two_gaussians(150, 3, 2.0, 6);
        let x = apply_mcar(&x, 0.3, 1).unwrap();
        let fit = rnda_train(&x, &labels, &LdaConfig { iterations: 20, ..small_cfg() }).unwrap();
        let w = DVector::from_vec(vec![fit.model.w[0], fit.model.w[1], fit.model.w[2], fit.model.bias]);
        let values: Vec<f64> = [1, 3, 5]
            .iter()
            .map(|&k| robust_objective(&fit.model.moments.truncated(k), &w, true, 256, 8).unwrap())
            .collect();
        assert!(values.windows(2).all(|p| p[1] >= p[0]), "{values:?}");
    }

    #[test]
    fn objective_trace_trends_down() {
        let (x, labels) = two_gaussians(200, 2, 3.0, 2);
        let fit = rnda_train(&x, &labels, &LdaConfig { iterations: 60, ..small_cfg() }).unwrap();
        let avg: Vec<f64> = fit.trace.objective.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        // consecutive averages may rise only by Monte-Carlo noise
        assert!(avg.windows(2).all(|p| p[1] <= p[0] + 0.02), "{:?}", fit.trace.objective);
        assert!(avg[avg.len() - 1] < 0.7 * avg[0]);
        assert!((fit.trace.objective[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_rejects_single_class() {
        let (x, labels) = two_gaussians(60, 2, 3.0, 2);
        let cfg = LdaConfig { iterations: 10, ..small_cfg() };
        let a = rnda_train(&x, &labels, &cfg).unwrap();
        let b = rnda_train(&x, &labels, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(matches!(rnda_train(&x, &vec![1; 60], &cfg), Err(Error::EmptyClass(0))));
        assert!(rnda_train(&x, &vec![2; 60], &cfg).is_err());
    }
}
