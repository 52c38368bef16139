//! Pairwise moment estimates from available entries and bootstrap radii.
//!
//! Every second moment `C0[i][j]` is averaged over the rows where both
//! features are observed; its radius is the standard deviation of the same
//! statistic across bootstrap resamples of those rows. Pairs that are never
//! observed together are flagged and given the box `[-B, B]`, `B` being the
//! largest observed `|C0|`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{pair_stream, serde_dense};
use crate::rng;

pub const DEFAULT_BOOTSTRAP_SAMPLES: usize = 30;
pub const DEFAULT_ROBUSTNESS: f64 = 2.0;

// Sub-seeds for the three families of bootstrap draws.
const TAG_SECOND: u64 = 0;
const TAG_CROSS: u64 = 1;
const TAG_MEAN: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    /// Bootstrap resamples per radius.
    pub k: usize,
    /// Robustness multiplier applied to every radius.
    pub c: f64,
    pub seed: u64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_BOOTSTRAP_SAMPLES,
            c: DEFAULT_ROBUSTNESS,
            seed: 0,
        }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!(
                "bootstrap needs k >= 2 resamples, got {}",
                self.k
            )));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "robustness multiplier must be finite and >= 0, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// Point estimates, radii and availability counts for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEnvelope {
    pub dim: usize,
    pub c: f64,
    pub k: usize,
    pub seed: u64,
    pub feature_names: Vec<String>,
    #[serde(with = "serde_dense::matrix")]
    pub c0: DMatrix<f64>,
    #[serde(with = "serde_dense::matrix")]
    pub delta: DMatrix<f64>,
    #[serde(with = "serde_dense::vector")]
    pub b0: DVector<f64>,
    #[serde(with = "serde_dense::vector")]
    pub b_delta: DVector<f64>,
    #[serde(with = "serde_dense::vector")]
    pub mu0: DVector<f64>,
    #[serde(with = "serde_dense::vector")]
    pub mu_delta: DVector<f64>,
    pub target_mean: f64,
    #[serde(with = "serde_dense::matrix")]
    pub counts: DMatrix<usize>,
    pub cross_counts: Vec<usize>,
    /// Feature pairs `(i, j)`, `i <= j`, never observed together.
    pub flagged_pairs: Vec<(usize, usize)>,
    /// Features never observed together with the target.
    pub flagged_cross: Vec<usize>,
    /// Half-width used for flagged second-moment pairs.
    pub fill_bound: f64,
    /// Half-width used for flagged cross moments.
    pub cross_fill_bound: f64,
}

impl MomentEnvelope {
    fn is_flagged_pair(&self, i: usize, j: usize) -> bool {
        self.counts[(i, j)] == 0
    }

    pub fn c_min(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if self.is_flagged_pair(i, j) {
                -self.fill_bound
            } else {
                self.c0[(i, j)] - self.c * self.delta[(i, j)]
            }
        })
    }

    pub fn c_max(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if self.is_flagged_pair(i, j) {
                self.fill_bound
            } else {
                self.c0[(i, j)] + self.c * self.delta[(i, j)]
            }
        })
    }

    pub fn b_min(&self) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            if self.cross_counts[i] == 0 {
                -self.cross_fill_bound
            } else {
                self.b0[i] - self.c * self.b_delta[i]
            }
        })
    }

    pub fn b_max(&self) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            if self.cross_counts[i] == 0 {
                self.cross_fill_bound
            } else {
                self.b0[i] + self.c * self.b_delta[i]
            }
        })
    }

    pub fn mu_min(&self) -> DVector<f64> {
        &self.mu0 - &self.mu_delta * self.c
    }

    pub fn mu_max(&self) -> DVector<f64> {
        &self.mu0 + &self.mu_delta * self.c
    }

    /// Envelope for a hand-written box with every pair observed and no
    /// mean information.
    pub fn from_box(
        c0: DMatrix<f64>,
        delta: DMatrix<f64>,
        b0: DVector<f64>,
        b_delta: DVector<f64>,
        c: f64,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let dim = b0.len();
        let env = Self {
            dim,
            c,
            k: 0,
            seed: 0,
            feature_names,
            c0,
            delta,
            b0,
            b_delta,
            mu0: DVector::zeros(dim),
            mu_delta: DVector::zeros(dim),
            target_mean: 0.0,
            counts: DMatrix::from_element(dim, dim, 1),
            cross_counts: vec![1; dim],
            flagged_pairs: Vec::new(),
            flagged_cross: Vec::new(),
            fill_bound: 0.0,
            cross_fill_bound: 0.0,
        };
        if env.feature_names.len() != dim {
            return Err(Error::Dimension(format!("{} names for dimension {dim}", env.feature_names.len())));
        }
        env.check()?;
        Ok(env)
    }

    /// Same estimates under a different robustness multiplier.
    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Self = serde_json::from_str(s)?;
        env.check()?;
        Ok(env)
    }

    fn check(&self) -> Result<()> {
        let d = self.dim;
        let square = |m: &DMatrix<f64>| m.nrows() == d && m.ncols() == d;
        if !square(&self.c0)
            || !square(&self.delta)
            || self.counts.shape() != (d, d)
            || self.b0.len() != d
            || self.b_delta.len() != d
            || self.mu0.len() != d
            || self.mu_delta.len() != d
            || self.cross_counts.len() != d
        {
            return Err(Error::Dimension(format!("envelope arrays do not match dim {d}")));
        }
        let negative = self.delta.iter().chain(self.b_delta.iter()).chain(self.mu_delta.iter()).any(|&r| r < 0.0);
        if negative || self.c < 0.0 {
            return Err(Error::InvalidParameter("envelope radii and c must be nonnegative".into()));
        }
        Ok(())
    }
}

fn joint_rows(m: &MaskedMatrix, i: usize, j: usize) -> Vec<usize> {
    (0..m.nrows())
        .filter(|&r| m.is_available(r, i) && m.is_available(r, j))
        .collect()
}

/// `C0[i][j]` averaged over jointly observed rows, with the joint counts.
/// Unobserved pairs hold `0` with a zero count.
pub fn point_second_moment(m: &MaskedMatrix) -> (DMatrix<f64>, DMatrix<usize>) {
    let d = m.ncols();
    let mut c0 = DMatrix::zeros(d, d);
    let mut counts = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in 0..m.nrows() {
                if let (Some(a), Some(b)) = (m.get(r, i), m.get(r, j)) {
                    sum += a * b;
                    n += 1;
                }
            }
            let v = if n > 0 { sum / n as f64 } else { 0.0 };
            c0[(i, j)] = v;
            c0[(j, i)] = v;
            counts[(i, j)] = n;
            counts[(j, i)] = n;
        }
    }
    (c0, counts)
}

/// `b0[i]` averaged over rows where feature `i` and the target are observed.
pub fn point_cross_moment(m: &MaskedMatrix, y: &[Option<f64>]) -> Result<(DVector<f64>, Vec<usize>)> {
    check_target(m, y)?;
    let d = m.ncols();
    let mut b0 = DVector::zeros(d);
    let mut counts = vec![0; d];
    for i in 0..d {
        let mut sum = 0.0;
        for (r, t) in y.iter().enumerate() {
            if let (Some(a), Some(t)) = (m.get(r, i), t) {
                sum += a * t;
                counts[i] += 1;
            }
        }
        if counts[i] > 0 {
            b0[i] = sum / counts[i] as f64;
        }
    }
    Ok((b0, counts))
}

fn check_target(m: &MaskedMatrix, y: &[Option<f64>]) -> Result<()> {
    if y.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "target has {} rows, features have {}",
            y.len(),
            m.nrows()
        )));
    }
    Ok(())
}

/// Sample standard deviation of the mean of `values` across `k` bootstrap
/// resamples of size `values.len()`.
fn bootstrap_sd(values: &[f64], k: usize, rng: &mut impl Rng) -> f64 {
    let m = values.len();
    if m <= 1 {
        return 0.0;
    }
    let stats: Vec<f64> = (0..k)
        .map(|_| {
            let s: f64 = (0..m).map(|_| values[rng.random_range(0..m)]).sum();
            s / m as f64
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / k as f64;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    var.sqrt()
}

fn pair_products(m: &MaskedMatrix, i: usize, j: usize) -> Vec<f64> {
    joint_rows(m, i, j)
        .into_iter()
        .map(|r| m.get(r, i).unwrap_or_default() * m.get(r, j).unwrap_or_default())
        .collect()
}

/// Bootstrap radius of `C0[i][j]`: the standard deviation of the product mean
/// over `k` resamples (with replacement, size `m_ij`) of the jointly observed
/// rows. Uses the same random stream as [`build_envelope`].
pub fn bootstrap_radius(m: &MaskedMatrix, i: usize, j: usize, k: usize, seed: u64) -> Result<f64> {
    if i >= m.ncols() || j >= m.ncols() {
        return Err(Error::Dimension(format!("pair ({i}, {j}) out of range")));
    }
    if k < 2 {
        return Err(Error::InvalidParameter(format!("bootstrap needs k >= 2, got {k}")));
    }
    let values = pair_products(m, i, j);
    if values.is_empty() {
        return Err(Error::UnavailablePair { i, j });
    }
    let mut rng = rng::stream(rng::derive_seed(seed, TAG_SECOND), pair_stream(i, j));
    Ok(bootstrap_sd(&values, k, &mut rng))
}

/// Column means over available entries and their bootstrap radii, drawn
/// from the same streams as the `mu` part of [`build_envelope`].
pub fn bootstrap_mean(m: &MaskedMatrix, k: usize, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("bootstrap needs k >= 2, got {k}")));
    }
    let mean_seed = rng::derive_seed(seed, TAG_MEAN);
    let stats: Vec<(f64, f64)> = (0..m.ncols())
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = m.column(i).into_iter().flatten().collect();
            if col.is_empty() {
                return Err(Error::EmptyColumn(m.column_names()[i].clone()));
            }
            let mu = col.iter().sum::<f64>() / col.len() as f64;
            let mut rng = rng::stream(mean_seed, i as u64);
            Ok((mu, bootstrap_sd(&col, k, &mut rng)))
        })
        .collect::<Result<_>>()?;
    Ok((
        DVector::from_iterator(m.ncols(), stats.iter().map(|t| t.0)),
        DVector::from_iterator(m.ncols(), stats.iter().map(|t| t.1)),
    ))
}

/// Point estimates and radii of `C`, `b = E[x y]`, `mu = E[x]` and the target
/// mean. Pair radii are computed in parallel on per-pair streams, so the
/// result does not depend on the thread count.
pub fn build_envelope(x: &MaskedMatrix, y: &[Option<f64>], cfg: &EnvelopeConfig) -> Result<MomentEnvelope> {
    cfg.validate()?;
    check_target(x, y)?;
    let d = x.ncols();
    let (c0, counts) = point_second_moment(x);
    let (b0, cross_counts) = point_cross_moment(x, y)?;

    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let pair_seed = rng::derive_seed(cfg.seed, TAG_SECOND);
    let radii: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let values = pair_products(x, i, j);
            let mut rng = rng::stream(pair_seed, pair_stream(i, j));
            bootstrap_sd(&values, cfg.k, &mut rng)
        })
        .collect();
    let mut delta = DMatrix::zeros(d, d);
    for (&(i, j), &r) in pairs.iter().zip(&radii) {
        delta[(i, j)] = r;
        delta[(j, i)] = r;
    }

    let cross_seed = rng::derive_seed(cfg.seed, TAG_CROSS);
    let mean_seed = rng::derive_seed(cfg.seed, TAG_MEAN);
    let per_feature: Vec<(f64, f64, f64)> = (0..d)
        .into_par_iter()
        .map(|i| {
            let cross: Vec<f64> = y
                .iter()
                .enumerate()
                .filter_map(|(r, t)| Some(x.get(r, i)? * (*t)?))
                .collect();
            let mut rng = rng::stream(cross_seed, i as u64);
            let b_rad = bootstrap_sd(&cross, cfg.k, &mut rng);

            let col: Vec<f64> = x.column(i).into_iter().flatten().collect();
            let mu = if col.is_empty() {
                0.0
            } else {
                col.iter().sum::<f64>() / col.len() as f64
            };
            let mut rng = rng::stream(mean_seed, i as u64);
            let mu_rad = bootstrap_sd(&col, cfg.k, &mut rng);
            (b_rad, mu, mu_rad)
        })
        .collect();
    let b_delta = DVector::from_iterator(d, per_feature.iter().map(|t| t.0));
    let mu0 = DVector::from_iterator(d, per_feature.iter().map(|t| t.1));
    let mu_delta = DVector::from_iterator(d, per_feature.iter().map(|t| t.2));

    let observed_y: Vec<f64> = y.iter().flatten().copied().collect();
    let target_mean = if observed_y.is_empty() {
        0.0
    } else {
        observed_y.iter().sum::<f64>() / observed_y.len() as f64
    };

    let flagged_pairs: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(i, j)| counts[(i, j)] == 0).collect();
    let flagged_cross: Vec<usize> = (0..d).filter(|&i| cross_counts[i] == 0).collect();
    let fill_bound = max_abs_where(c0.iter().zip(counts.iter()).map(|(&v, &n)| (v, n)));
    let cross_fill_bound = {
        let b = max_abs_where(b0.iter().zip(&cross_counts).map(|(&v, &n)| (v, n)));
        if flagged_cross.len() == d {
            fill_bound
        } else {
            b
        }
    };

    Ok(MomentEnvelope {
        dim: d,
        c: cfg.c,
        k: cfg.k,
        seed: cfg.seed,
        feature_names: x.column_names().to_vec(),
        c0,
        delta,
        b0,
        b_delta,
        mu0,
        mu_delta,
        target_mean,
        counts,
        cross_counts,
        flagged_pairs,
        flagged_cross,
        fill_bound,
        cross_fill_bound,
    })
}

fn max_abs_where(it: impl Iterator<Item = (f64, usize)>) -> f64 {
    it.filter(|&(_, n)| n > 0).map(|(v, _)| v.abs()).fold(0.0, f64::max)
}
