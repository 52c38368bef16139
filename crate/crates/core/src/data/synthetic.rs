//! Seeded synthetic datasets for experiments and tests.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, serde_dense};
use crate::rng;

/// Jointly normal features with a linear target `y = theta'x + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelSpec {
    #[serde(with = "serde_dense::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "serde_dense::matrix")]
    pub covariance: DMatrix<f64>,
    pub noise_sd: f64,
}

impl LinearModelSpec {
    /// Random covariance `A A'/d + I/2` and weights `N(0, 1)`. The noise is
    /// set so that the true weights reach a population NRMSE of `floor`.
    pub fn random(d: usize, floor: f64, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&floor) {
            return Err(Error::InvalidParameter(format!("noise floor must be in [0, 1), got {floor}")));
        }
        let mut r = rng::stream(seed, 0);
        let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut r));
        let covariance = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        let mut r = rng::stream(seed, 1);
        let theta = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
        let signal = theta.dot(&(&covariance * &theta));
        let noise_sd = (signal * floor * floor / (1.0 - floor * floor)).sqrt();
        Ok(Self {
            theta,
            covariance,
            noise_sd,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Population second moment `E[x x']`, the covariance since the features
    /// are centred.
    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `n` complete rows and their targets.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(MaskedMatrix, Vec<f64>)> {
        let d = self.dim();
        let l = linalg::psd_factor(&self.covariance)?;
        let mut r = rng::stream(seed, 2);
        let mut x = DMatrix::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
            let row = &l * z;
            let e: f64 = StandardNormal.sample(&mut r);
            y.push(self.theta.dot(&row) + self.noise_sd * e);
            x.set_row(i, &row.transpose());
        }
        Ok((MaskedMatrix::complete(&x), y))
    }
}

/// Appends `y` as a column named `name`.
pub fn with_target(x: &MaskedMatrix, y: &[Option<f64>], name: &str) -> Result<MaskedMatrix> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} targets for {} rows", y.len(), x.nrows())));
    }
    let rows: Vec<Vec<Option<f64>>> = (0..x.nrows())
        .map(|i| {
            let mut r = x.row(i);
            r.push(y[i]);
            r
        })
        .collect();
    let mut names = x.column_names().to_vec();
    names.push(name.to_string());
    MaskedMatrix::from_rows_named(&rows, names)
}

/// Two Gaussian classes with identity covariance, alternating labels. The
/// class means differ by `gap` along the first feature and `0.3 * gap` along
/// the others.
pub fn two_gaussians(n: usize, d: usize, gap: f64, seed: u64) -> (MaskedMatrix, Vec<u8>) {
    let mut r = rng::stream(seed, 3);
    let mut x = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let shift = if label == 1 { gap / 2.0 } else { -gap / 2.0 };
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut r);
            x[(i, j)] = e + if j == 0 { shift } else { 0.3 * shift };
        }
        labels.push(label);
    }
    (MaskedMatrix::complete(&x), labels)
}
