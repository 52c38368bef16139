//! Monte-Carlo class losses `pi * E[-log sigma(w'x)]` (class 1) and
//! `pi * E[-log(1 - sigma(w'x))]` (class 0) under `x ~ N(mu, Sigma)`, with
//! analytic gradients in `w`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Numerically stable `log(1 + e^t)`.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `n x d` standard normal draws from stream 0 of `seed`.
pub fn standard_normal_draws(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, 0);
    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    z
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::InvalidParameter(format!("class label must be 0 or 1, got {label}")));
    }
    Ok(())
}

/// Loss and gradient on fixed draws `z`, with `x_t = mu + L z_t`.
pub(crate) fn loss_grad_from_draws(
    w: &DVector<f64>,
    mu: &DVector<f64>,
    factor: &DMatrix<f64>,
    z: &DMatrix<f64>,
    prior: f64,
    label: u8,
) -> (f64, DVector<f64>) {
    let n = z.nrows() as f64;
    let shift = w.dot(mu);
    let v = factor.transpose() * w;
    let scores = z * v;
    let mut loss = 0.0;
    let mut r = DVector::zeros(z.nrows());
    for (t, s) in scores.iter().enumerate() {
        let s = s + shift;
        if label == 1 {
            loss += softplus(-s);
            r[t] = -sigmoid(-s);
        } else {
            loss += softplus(s);
            r[t] = sigmoid(s);
        }
    }
    let a = r.sum() / n;
    let grad = (mu * a + factor * (z.transpose() * &r) / n) * prior;
    (prior * loss / n, grad)
}

fn validate(w: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, n_mc: usize, label: u8) -> Result<()> {
    check_label(label)?;
    if n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be at least 1".into()));
    }
    let d = w.len();
    if mu.len() != d || sigma.shape() != (d, d) {
        return Err(Error::Dimension(format!("weights of length {d} do not match the class moments")));
    }
    Ok(())
}

/// Mean over `n_mc` draws of the class loss, times the prior.
pub fn class_loss_mc(
    w: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    prior: f64,
    label: u8,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    Ok(class_loss_grad_mc(w, mu, sigma, prior, label, n_mc, seed)?.0)
}

/// As [`class_loss_mc`], also returning the gradient in `w`.
pub fn class_loss_grad_mc(
    w: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    prior: f64,
    label: u8,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, DVector<f64>)> {
    validate(w, mu, sigma, n_mc, label)?;
    let factor = linalg::psd_factor(sigma)?;
    let z = standard_normal_draws(n_mc, w.len(), seed);
    Ok(loss_grad_from_draws(w, mu, &factor, &z, prior, label))
}
