//! Robust normal discriminant analysis.
//!
//! Each class is modelled as `N(mu_t, Sigma_t)` with `mu_t` in a bootstrap box
//! and `Sigma_t` in a finite set of bootstrap covariance estimates. Training
//! minimizes over `w` the worst case of the expected logistic loss.
//!
//! Features are standardized with the column means and standard deviations of
//! the training data. A missing coordinate then contributes 0 to `w'x` at
//! prediction time, which is the same as plugging in the training mean.

mod em;
mod mc;
mod simplex;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, serde_dense};
use crate::rng;

pub use em::{em_e_step, em_m_step, em_rnda_train, EmConfig, EmFit, EmParams};
pub use mc::{class_loss_grad_mc, class_loss_mc, sigmoid, softplus, standard_normal_draws};
pub use simplex::{simplex_bisection, simplex_sort_solve, SimplexWeights, MAX_BISECTION_STEPS};
pub use train::{robust_objective, rnda_train, rnda_train_with_priors, LdaFit, LdaTrace};

const TAG_RESAMPLE: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Size of each class's covariance set.
    pub k: usize,
    pub iterations: usize,
    /// Gradient step.
    pub alpha: f64,
    /// Simplex regularization; `None` uses `0.1 * max_i f_i` each iteration.
    pub delta: Option<f64>,
    /// Monte-Carlo draws per loss evaluation.
    pub n_mc: usize,
    /// Bisection tolerance on `sum p`.
    pub eps: f64,
    /// Width multiplier of the mean boxes.
    pub c: f64,
    /// Resamples behind each mean radius.
    pub bootstrap: usize,
    pub seed: u64,
    /// Learn a bias term alongside `w`.
    pub intercept: bool,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            k: 5,
            iterations: 500,
            alpha: 0.05,
            delta: None,
            n_mc: 512,
            eps: 1e-8,
            c: 2.0,
            bootstrap: 30,
            seed: 0,
            intercept: true,
        }
    }
}

impl LdaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta must be positive, got {d}"));
            }
        }
        if self.n_mc == 0 {
            return bad("n_mc must be at least 1".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("c must be nonnegative, got {}", self.c));
        }
        if self.bootstrap < 2 {
            return bad("bootstrap needs at least 2 resamples".into());
        }
        Ok(())
    }
}

/// Column centering and scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each column's available
    /// entries. A constant column keeps scale 1.
    pub fn fit(m: &MaskedMatrix) -> Result<Self> {
        let mut center = Vec::with_capacity(m.ncols());
        let mut scale = Vec::with_capacity(m.ncols());
        for j in 0..m.ncols() {
            let col: Vec<f64> = m.column(j).into_iter().flatten().collect();
            if col.is_empty() {
                return Err(Error::EmptyColumn(m.column_names()[j].clone()));
            }
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            center.push(mean);
            scale.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 });
        }
        Ok(Self { center, scale })
    }

    pub fn apply(&self, m: &MaskedMatrix) -> Result<MaskedMatrix> {
        let d = self.center.len();
        if m.ncols() != d {
            return Err(Error::Dimension(format!("{} columns, standardizer expects {d}", m.ncols())));
        }
        let mut values = m.raw_values().to_vec();
        for (k, v) in values.iter_mut().enumerate() {
            *v = (*v - self.center[k % d]) / self.scale[k % d];
        }
        MaskedMatrix::new(m.nrows(), d, values, m.mask().to_vec(), m.column_names().to_vec())
    }

    /// Standardized row with missing cells set to 0.
    pub fn apply_row(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(x, (c, s))| x.map_or(0.0, |v| (v - c) / s))
            .collect()
    }
}

/// Worst-case mean for class 1: `mu_max` where `w[i] <= 0`, `mu_min`
/// elsewhere. Both maximize `E[-log sigma(w'x)]` coordinate by coordinate.
pub fn worst_case_mean(w: &DVector<f64>, mu_min: &DVector<f64>, mu_max: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(w.len(), |i, _| if w[i] <= 0.0 { mu_max[i] } else { mu_min[i] })
}

/// Worst-case mean for either class. Class 0 mirrors the class-1 rule since
/// its loss `-log(1 - sigma(w'x))` increases with `w'x`.
pub fn worst_case_mean_for(label: u8, w: &DVector<f64>, mu_min: &DVector<f64>, mu_max: &DVector<f64>) -> DVector<f64> {
    if label == 1 {
        worst_case_mean(w, mu_min, mu_max)
    } else {
        DVector::from_fn(w.len(), |i, _| if w[i] <= 0.0 { mu_min[i] } else { mu_max[i] })
    }
}

/// Pairwise covariance: for each pair, the population covariance over the
/// rows where both entries are available. Returns the joint counts too;
/// pairs never observed together hold 0.
pub fn pairwise_covariance(m: &MaskedMatrix) -> (DMatrix<f64>, DMatrix<usize>) {
    let d = m.ncols();
    let mut cov = DMatrix::zeros(d, d);
    let mut counts = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let (mut si, mut sj, mut sij, mut n) = (0.0, 0.0, 0.0, 0usize);
            for r in 0..m.nrows() {
                if let (Some(a), Some(b)) = (m.get(r, i), m.get(r, j)) {
                    si += a;
                    sj += b;
                    sij += a * b;
                    n += 1;
                }
            }
            if n > 0 {
                let nf = n as f64;
                let v = sij / nf - (si / nf) * (sj / nf);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
            counts[(i, j)] = n;
            counts[(j, i)] = n;
        }
    }
    (cov, counts)
}

/// Row indices of bootstrap resample `s` (with replacement, size `n`).
pub fn resample_indices(n: usize, seed: u64, s: usize) -> Vec<usize> {
    let mut rng = rng::stream(rng::derive_seed(seed, TAG_RESAMPLE), s as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// `k` covariance estimates: the plug-in estimate followed by `k - 1`
/// bootstrap resamples, each PSD-projected. Resample `s` depends only on
/// `(seed, s)`, so the set for `k` is a prefix of the set for any larger `k`.
/// A pair missing from a resample keeps its plug-in value; a pair never
/// observed together is 0.
pub fn bootstrap_cov_set(m: &MaskedMatrix, k: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    if k == 0 {
        return Err(Error::InvalidParameter("covariance set needs k >= 1".into()));
    }
    let (plug_in, counts) = pairwise_covariance(m);
    for j in 0..m.ncols() {
        if counts[(j, j)] == 0 {
            return Err(Error::EmptyColumn(m.column_names()[j].clone()));
        }
    }
    let mut out = Vec::with_capacity(k);
    out.push(linalg::psd_project(&plug_in)?);
    for s in 1..k {
        let sub = m.select_rows(&resample_indices(m.nrows(), seed, s));
        let (mut cov, sub_counts) = pairwise_covariance(&sub);
        for (v, (&n, &p)) in cov.iter_mut().zip(sub_counts.iter().zip(plug_in.iter())) {
            if n == 0 {
                *v = p;
            }
        }
        out.push(linalg::psd_project(&cov)?);
    }
    Ok(out)
}

/// Mean box and covariance set of one class, in standardized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBox {
    pub count: usize,
    #[serde(with = "serde_dense::vector")]
    pub mu_min: DVector<f64>,
    #[serde(with = "serde_dense::vector")]
    pub mu_max: DVector<f64>,
    #[serde(with = "sigma_list")]
    pub sigmas: Vec<DMatrix<f64>>,
}

impl ClassBox {
    pub fn estimate(m: &MaskedMatrix, cfg: &LdaConfig, seed: u64) -> Result<Self> {
        let (mu, radius) = crate::moments::bootstrap_mean(m, cfg.bootstrap, rng::derive_seed(seed, 0))?;
        let sigmas = bootstrap_cov_set(m, cfg.k, rng::derive_seed(seed, 1))?;
        Ok(Self {
            count: m.nrows(),
            mu_min: &mu - &radius * cfg.c,
            mu_max: &mu + &radius * cfg.c,
            sigmas,
        })
    }

    /// Keeps the first `k` covariance candidates.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            sigmas: self.sigmas.iter().take(k).cloned().collect(),
            ..self.clone()
        }
    }
}

mod sigma_list {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::serde_dense::{from_rows, rows};

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let raw: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        raw.iter()
            .map(|r| from_rows(r).ok_or_else(|| serde::de::Error::custom("ragged covariance rows")))
            .collect()
    }
}

/// Both class boxes plus priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMoments {
    pub class0: ClassBox,
    pub class1: ClassBox,
    pub pi0: f64,
    pub pi1: f64,
}

impl ClassMoments {
    /// Estimates both classes from standardized rows. Priors default to the
    /// label frequencies.
    pub fn estimate(z: &MaskedMatrix, labels: &[u8], priors: Option<(f64, f64)>, cfg: &LdaConfig) -> Result<Self> {
        check_labels(z.nrows(), labels)?;
        let rows = |t: u8| -> Vec<usize> { (0..labels.len()).filter(|&i| labels[i] == t).collect() };
        let (r0, r1) = (rows(0), rows(1));
        if r0.is_empty() {
            return Err(Error::EmptyClass(0));
        }
        if r1.is_empty() {
            return Err(Error::EmptyClass(1));
        }
        let (pi0, pi1) = match priors {
            Some((a, b)) => {
                if !(a > 0.0 && b > 0.0 && ((a + b) - 1.0).abs() < 1e-12) {
                    return Err(Error::InvalidParameter(format!("priors ({a}, {b}) must be positive and sum to 1")));
                }
                (a, b)
            }
            None => {
                let n = labels.len() as f64;
                (r0.len() as f64 / n, r1.len() as f64 / n)
            }
        };
        Ok(Self {
            class0: ClassBox::estimate(&z.select_rows(&r0), cfg, rng::derive_seed(cfg.seed, 10))?,
            class1: ClassBox::estimate(&z.select_rows(&r1), cfg, rng::derive_seed(cfg.seed, 11))?,
            pi0,
            pi1,
        })
    }

    pub fn dim(&self) -> usize {
        self.class0.mu_min.len()
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            class0: self.class0.truncated(k),
            class1: self.class1.truncated(k),
            ..*self
        }
    }
}

pub(crate) fn check_labels(n: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidParameter(format!("labels must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// Trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub feature_names: Vec<String>,
    /// Weights on standardized features.
    #[serde(with = "serde_dense::vector")]
    pub w: DVector<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub standardizer: Standardizer,
    pub moments: ClassMoments,
    pub config: LdaConfig,
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w'z + bias` on the standardized row, missing coordinates counting 0.
    pub fn score(&self, row: &[Option<f64>]) -> Result<f64> {
        if row.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.dim()
            )));
        }
        let z = self.standardizer.apply_row(row);
        Ok(z.iter().zip(self.w.iter()).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    pub fn probability(&self, row: &[Option<f64>]) -> Result<f64> {
        Ok(sigmoid(self.score(row)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        let d = m.w.len();
        if m.feature_names.len() != d || m.standardizer.center.len() != d || m.standardizer.scale.len() != d {
            return Err(Error::Dimension("model arrays disagree".into()));
        }
        Ok(m)
    }
}

/// 1 iff `sigma(w'x) >= threshold`.
pub fn classify(model: &LdaModel, row: &[Option<f64>]) -> Result<u8> {
    Ok(u8::from(model.probability(row)? >= model.threshold))
}

pub fn classify_batch(model: &LdaModel, m: &MaskedMatrix) -> Result<Vec<u8>> {
    (0..m.nrows()).map(|i| classify(model, &m.row(i))).collect()
}
