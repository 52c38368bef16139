//! Hard-label EM for rows whose label is missing.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::{rnda_train, rnda_train_with_priors, LdaFit};
use super::{check_labels, classify, pairwise_covariance, LdaConfig};
use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::point_second_moment;
use crate::rng;

const TAG_INIT: u64 = 50;

/// Per-class parameters from labeled (or assigned) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmParams {
    /// Means over each class's available entries.
    pub mu: [DVector<f64>; 2],
    /// Rows of each class contributing to each mean.
    pub mean_counts: [Vec<usize>; 2],
    /// Pairwise second moments `E[x_i x_j]`, as in the moments module.
    pub second_moment: [DMatrix<f64>; 2],
    pub pair_counts: [DMatrix<usize>; 2],
    /// PSD-projected pairwise covariance, used by the E-step densities.
    pub covariance: [DMatrix<f64>; 2],
    pub pi: [f64; 2],
}

/// Parameters of both classes under `labels`. A mean with no contributing
/// rows is 0 with a zero count.
pub fn em_m_step(x: &MaskedMatrix, labels: &[u8]) -> Result<EmParams> {
    check_labels(x.nrows(), labels)?;
    let part = |t: u8| -> Result<ClassPart> {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == t).collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass(t));
        }
        let sub = x.select_rows(&rows);
        let mut mu = DVector::zeros(x.ncols());
        let mut counts = vec![0; x.ncols()];
        for j in 0..x.ncols() {
            let col: Vec<f64> = sub.column(j).into_iter().flatten().collect();
            counts[j] = col.len();
            if !col.is_empty() {
                mu[j] = col.iter().sum::<f64>() / col.len() as f64;
            }
        }
        let (second, pair_counts) = point_second_moment(&sub);
        let cov = linalg::psd_project(&pairwise_covariance(&sub).0)?;
        Ok(ClassPart { mu, counts, second, pair_counts, cov, n: rows.len() })
    };
    let (p0, p1) = (part(0)?, part(1)?);
    let n = (p0.n + p1.n) as f64;
    Ok(EmParams {
        pi: [p0.n as f64 / n, p1.n as f64 / n],
        mu: [p0.mu, p1.mu],
        mean_counts: [p0.counts, p1.counts],
        second_moment: [p0.second, p1.second],
        pair_counts: [p0.pair_counts, p1.pair_counts],
        covariance: [p0.cov, p1.cov],
    })
}

struct ClassPart {
    mu: DVector<f64>,
    counts: Vec<usize>,
    second: DMatrix<f64>,
    pair_counts: DMatrix<usize>,
    cov: DMatrix<f64>,
    n: usize,
}

/// Gaussian log density on the coordinates `idx`, adding diagonal jitter when
/// the marginal covariance is singular.
fn marginal_log_density(x: &[f64], mu: &DVector<f64>, cov: &DMatrix<f64>, idx: &[usize]) -> Result<f64> {
    let m = idx.len();
    let sub = DMatrix::from_fn(m, m, |a, b| cov[(idx[a], idx[b])]);
    let diff = DVector::from_fn(m, |a, _| x[a] - mu[idx[a]]);
    let scale = sub.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    for attempt in 0..12 {
        let mut s = sub.clone();
        for a in 0..m {
            s[(a, a)] += jitter;
        }
        if let Some(chol) = s.cholesky() {
            let sol = chol.solve(&diff);
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return Ok(-0.5 * (diff.dot(&sol) + log_det + m as f64 * (2.0 * std::f64::consts::PI).ln()));
        }
        jitter = scale * 1e-12 * 10f64.powi(attempt);
    }
    Err(Error::Singular("class covariance stays singular after jitter".into()))
}

/// Label 1 iff `pi1 N(x; mu1, S1) > pi0 N(x; mu0, S0)` on the row's
/// available coordinates, compared in log space. Ties go to 0.
pub fn em_e_step(x: &MaskedMatrix, params: &EmParams) -> Result<Vec<u8>> {
    (0..x.nrows())
        .map(|i| {
            let idx: Vec<usize> = (0..x.ncols()).filter(|&j| x.is_available(i, j)).collect();
            let vals: Vec<f64> = idx.iter().filter_map(|&j| x.get(i, j)).collect();
            let mut score = [0.0; 2];
            for t in 0..2 {
                let ll = if idx.is_empty() {
                    0.0
                } else {
                    marginal_log_density(&vals, &params.mu[t], &params.covariance[t], &idx)?
                };
                score[t] = params.pi[t].ln() + ll;
            }
            Ok(u8::from(score[1] > score[0]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Outer rounds of train-then-relabel.
    pub rounds: usize,
    /// Gaussian E/M sweeps that refine the random initial labels.
    pub gaussian_steps: usize,
    /// Fresh random initializations allowed after a class empties.
    pub retries: usize,
    pub lda: LdaConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            gaussian_steps: 50,
            retries: 5,
            lda: LdaConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub fit: LdaFit,
    /// Final label of every row, given or assigned.
    pub labels: Vec<u8>,
    pub rounds: usize,
    pub restarts: usize,
}

fn is_empty_class(e: &Error) -> bool {
    matches!(e, Error::EmptyClass(_))
}

/// Trains with missing labels. Missing labels start random. Gaussian E/M
/// sweeps refine them, then each round re-estimates the class moments,
/// trains, and relabels the missing rows with the current classifier. With
/// no missing labels this is exactly [`rnda_train`].
pub fn em_rnda_train(x: &MaskedMatrix, labels: &[Option<u8>], cfg: &EmConfig) -> Result<EmFit> {
    cfg.lda.validate()?;
    if labels.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&l| l > 1) {
        return Err(Error::InvalidParameter(format!("labels must be 0 or 1, got {bad}")));
    }
    if cfg.rounds == 0 {
        return Err(Error::InvalidParameter("EM needs at least one round".into()));
    }
    let missing: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_none()).collect();
    if missing.is_empty() {
        let given: Vec<u8> = labels.iter().flatten().copied().collect();
        let fit = rnda_train(x, &given, &cfg.lda)?;
        return Ok(EmFit { fit, labels: given, rounds: 1, restarts: 0 });
    }

    let labeled: Vec<u8> = labels.iter().flatten().copied().collect();
    let init_priors = if labeled.is_empty() {
        None
    } else {
        let p1 = labeled.iter().filter(|&&l| l == 1).count() as f64 / labeled.len() as f64;
        (p1 > 0.0 && p1 < 1.0).then_some([1.0 - p1, p1])
    };

    let mut last_err = Error::EmptyClass(0);
    for attempt in 0..=cfg.retries {
        let mut rng = rng::stream(rng::derive_seed(cfg.lda.seed, TAG_INIT), attempt as u64);
        let mut current: Vec<u8> = labels
            .iter()
            .map(|l| l.unwrap_or_else(|| u8::from(rng.random::<bool>())))
            .collect();
        match run_attempt(x, &missing, &mut current, init_priors, cfg) {
            Ok((fit, rounds)) => {
                return Ok(EmFit {
                    fit,
                    labels: current,
                    rounds,
                    restarts: attempt,
                })
            }
            Err(e) if is_empty_class(&e) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

fn run_attempt(
    x: &MaskedMatrix,
    missing: &[usize],
    current: &mut [u8],
    init_priors: Option<[f64; 2]>,
    cfg: &EmConfig,
) -> Result<(LdaFit, usize)> {
    for step in 0..cfg.gaussian_steps {
        let mut params = em_m_step(x, current)?;
        if step == 0 {
            if let Some(p) = init_priors {
                params.pi = p;
            }
        }
        let assigned = em_e_step(x, &params)?;
        let mut changed = false;
        for &i in missing {
            changed |= current[i] != assigned[i];
            current[i] = assigned[i];
        }
        if !changed {
            break;
        }
    }
    let mut rounds = 0;
    loop {
        let fit = rnda_train_with_priors(x, current, None, &cfg.lda)?;
        rounds += 1;
        let mut changed = false;
        for &i in missing {
            let l = classify(&fit.model, &x.row(i))?;
            changed |= current[i] != l;
            current[i] = l;
        }
        if !changed || rounds == cfg.rounds {
            for t in 0..2u8 {
                if !current.contains(&t) {
                    return Err(Error::EmptyClass(t));
                }
            }
            return Ok((fit, rounds));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lda::rnda_train;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn n01(rng: &mut impl Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn params_2d() -> EmParams {
        EmParams {
            mu: [DVector::from_vec(vec![-1.0, 0.0]), DVector::from_vec(vec![1.0, 0.0])],
            mean_counts: [vec![1, 1], vec![1, 1]],
            second_moment: [DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            pair_counts: [DMatrix::from_element(2, 2, 1), DMatrix::from_element(2, 2, 1)],
            covariance: [DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            pi: [0.5, 0.5],
        }
    }

    #[test]
    fn e_step_ties_and_clear_cases() {
        let p = params_2d();
        let x = MaskedMatrix::from_rows(&[vec![Some(0.0), Some(3.0)], vec![Some(1.0), Some(0.0)], vec![None, None]]).unwrap();
        assert_eq!(em_e_step(&x, &p).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn e_step_matches_dense_density_ratio() {
        let mut p = params_2d();
        p.covariance[0] = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        p.covariance[1] = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.5]);
        p.pi = [0.3, 0.7];
        let density = |x: &[f64; 2], mu: &DVector<f64>, s: &DMatrix<f64>| {
            let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
            let (a, b) = (x[0] - mu[0], x[1] - mu[1]);
            let q = (s[(1, 1)] * a * a - 2.0 * s[(0, 1)] * a * b + s[(0, 0)] * b * b) / det;
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<[f64; 2]> = (0..300).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        let x = MaskedMatrix::from_rows(&pts.iter().map(|p| vec![Some(p[0]), Some(p[1])]).collect::<Vec<_>>()).unwrap();
        let got = em_e_step(&x, &p).unwrap();
        for (pt, l) in pts.iter().zip(got) {
            let r1 = p.pi[1] * density(pt, &p.mu[1], &p.covariance[1]);
            let r0 = p.pi[0] * density(pt, &p.mu[0], &p.covariance[0]);
            assert_eq!(l, u8::from(r1 > r0));
        }
    }

    #[test]
    fn m_step_matches_second_moment_per_class() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<Option<f64>>> = (0..50)
            .map(|_| (0..3).map(|_| (rng.random::<f64>() > 0.3).then(|| rng.random_range(-2.0..2.0))).collect())
            .collect();
        let labels: Vec<u8> = (0..50).map(|i| (i % 3 == 0) as u8).collect();
        let x = MaskedMatrix::from_rows(&rows).unwrap();
        let p = em_m_step(&x, &labels).unwrap();
        for t in 0..2u8 {
            let idx: Vec<usize> = (0..50).filter(|&i| labels[i] == t).collect();
            let (c, n) = point_second_moment(&x.select_rows(&idx));
            assert_eq!(p.second_moment[t as usize], c);
            assert_eq!(p.pair_counts[t as usize], n);
        }
        assert!((p.pi[0] + p.pi[1] - 1.0).abs() < 1e-15);
        assert!(matches!(em_m_step(&x, &vec![0; 50]), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn no_missing_labels_equals_direct_training() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<Option<f64>>> = (0..80)
            .map(|i| {
                let s = if i % 2 == 1 { 1.5 } else { -1.5 };
                (0..2).map(|_| Some(s + n01(&mut rng))).collect()
            })
            .collect();
        let labels: Vec<u8> = (0..80).map(|i| (i % 2) as u8).collect();
        let x = MaskedMatrix::from_rows(&rows).unwrap();
        let cfg = EmConfig {
            lda: LdaConfig { iterations: 20, n_mc: 64, ..LdaConfig::default() },
            ..EmConfig::default()
        };
        let em = em_rnda_train(&x, &labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), &cfg).unwrap();
        let direct = rnda_train(&x, &labels, &cfg.lda).unwrap();
        assert_eq!(em.fit.model.to_json().unwrap(), direct.model.to_json().unwrap());
        assert_eq!(em.rounds, 1);
    }

    #[test]
    fn recovers_unlabeled_clusters_up_to_flip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let truth: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let rows: Vec<Vec<Option<f64>>> = truth
            .iter()
            .map(|&l| {
                let s = if l == 1 { 3.0 } else { -3.0 };
                vec![Some(s + n01(&mut rng)), Some(0.5 * s + n01(&mut rng))]
            })
            .collect();
        let x = MaskedMatrix::from_rows(&rows).unwrap();
        let cfg = EmConfig {
            lda: LdaConfig { iterations: 60, n_mc: 64, alpha: 0.5, ..LdaConfig::default() },
            ..EmConfig::default()
        };
        let fit = em_rnda_train(&x, &vec![None; 200], &cfg).unwrap();
        let agree = fit.labels.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert!(agree.max(1.0 - agree) >= 0.9, "agreement {agree}");
        let again = em_rnda_train(&x, &vec![None; 200], &cfg).unwrap();
        assert_eq!(again.labels, fit.labels);
        assert_eq!(again.fit.model, fit.fit.model);
    }
}
