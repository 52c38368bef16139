//! Fitting, prediction under missing features, and imputation.
//!
//! A trained model keeps the worst-case `(C*, b*)`. A row with missing
//! features is predicted by the ridge solution restricted to its available
//! coordinates, and rows sharing a pattern share one restricted solve.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{admm_run, admm_solve, AdmmConfig};
use crate::data::{pattern_groups, MaskedMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, serde_dense};
use crate::moments::{build_envelope, EnvelopeConfig, MomentEnvelope};
use crate::regression::{nesterov_solve, pga_solve, ridge_solve, AscentOptions, SaddleProblem, SaddleState, SolverReport};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Pga,
    Nesterov,
    Admm,
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Pga => "pga",
            Solver::Nesterov => "nesterov",
            Solver::Admm => "admm",
        })
    }
}

/// Solver choice plus the options of every solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub solver: Solver,
    pub lambda: f64,
    pub ascent: AscentOptions,
    pub admm: AdmmConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: Solver::Pga,
            lambda: 1.0,
            ascent: AscentOptions::default(),
            admm: AdmmConfig::default(),
        }
    }
}

/// Runs the configured solver on `problem`.
pub fn solve(problem: &SaddleProblem, cfg: &SolverConfig) -> Result<(SaddleState, SolverReport)> {
    match cfg.solver {
        Solver::Pga => pga_solve(problem, &cfg.ascent),
        Solver::Nesterov => nesterov_solve(problem, &cfg.ascent),
        Solver::Admm => admm_solve(problem, &cfg.admm),
    }
}

/// Trained robust regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub feature_names: Vec<String>,
    pub target_name: String,
    #[serde(with = "serde_dense::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "serde_dense::matrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_dense::vector")]
    pub b: DVector<f64>,
    pub lambda: f64,
    /// Returned when no feature of a row is available.
    pub target_mean: f64,
}

impl RegressionModel {
    pub fn from_state(state: &SaddleState, feature_names: Vec<String>, target_name: String, target_mean: f64) -> Result<Self> {
        if feature_names.len() != state.theta.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} weights",
                feature_names.len(),
                state.theta.len()
            )));
        }
        Ok(Self {
            feature_names,
            target_name,
            theta: state.theta.clone(),
            c: state.c.clone(),
            b: state.b.clone(),
            lambda: state.lambda,
            target_mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Weights for one availability pattern.
    fn weights_for(&self, mask: &[bool]) -> Result<PatternWeights> {
        let idx: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        if idx.len() == mask.len() {
            return Ok(PatternWeights::Full);
        }
        if idx.is_empty() {
            return Ok(PatternWeights::Empty);
        }
        let c = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.c[(idx[a], idx[b])]);
        let b = DVector::from_fn(idx.len(), |a, _| self.b[idx[a]]);
        let theta = ridge_solve(&c, &b, self.lambda)?;
        Ok(PatternWeights::Restricted(idx, theta))
    }

    fn apply(&self, w: &PatternWeights, row: &[Option<f64>]) -> f64 {
        match w {
            PatternWeights::Full => row
                .iter()
                .zip(self.theta.iter())
                .map(|(x, t)| x.unwrap_or_default() * t)
                .sum(),
            PatternWeights::Empty => self.target_mean,
            PatternWeights::Restricted(idx, theta) => idx
                .iter()
                .zip(theta.iter())
                .map(|(&j, t)| row[j].unwrap_or_default() * t)
                .sum(),
        }
    }

    fn check_row(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension(format!(
                "row has {len} features, model expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        let d = m.theta.len();
        if m.c.shape() != (d, d) || m.b.len() != d || m.feature_names.len() != d {
            return Err(Error::Dimension("model arrays disagree".into()));
        }
        Ok(m)
    }
}

enum PatternWeights {
    Full,
    Empty,
    Restricted(Vec<usize>, DVector<f64>),
}

/// Prediction for one row: `theta*' x` if complete, the restricted ridge
/// solution on the available coordinates otherwise, the target mean if no
/// feature is available.
pub fn predict(model: &RegressionModel, row: &[Option<f64>]) -> Result<f64> {
    model.check_row(row.len())?;
    let mask: Vec<bool> = row.iter().map(Option::is_some).collect();
    let w = model.weights_for(&mask)?;
    Ok(model.apply(&w, row))
}

/// Predictions for every row, with one restricted solve per distinct
/// incomplete pattern.
pub fn predict_batch(model: &RegressionModel, m: &MaskedMatrix) -> Result<Vec<f64>> {
    Ok(predict_batch_counted(model, m)?.0)
}

/// As [`predict_batch`], also returning the number of restricted solves.
pub fn predict_batch_counted(model: &RegressionModel, m: &MaskedMatrix) -> Result<(Vec<f64>, usize)> {
    model.check_row(m.ncols())?;
    let groups: Vec<(Vec<bool>, Vec<usize>)> = pattern_groups(m).into_iter().collect();
    let results: Vec<(Vec<(usize, f64)>, bool)> = groups
        .par_iter()
        .map(|(mask, rows)| {
            let w = model.weights_for(mask)?;
            let solved = matches!(w, PatternWeights::Restricted(..));
            let vals = rows.iter().map(|&i| (i, model.apply(&w, &m.row(i)))).collect();
            Ok((vals, solved))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; m.nrows()];
    let mut solves = 0;
    for (vals, solved) in results {
        solves += usize::from(solved);
        for (i, v) in vals {
            out[i] = v;
        }
    }
    Ok((out, solves))
}

/// Everything needed to fit one regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub envelope: EnvelopeConfig,
    pub solver: SolverConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            envelope: EnvelopeConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Output of [`fit_regression`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: RegressionModel,
    /// Weights as produced by the solver. For ADMM this is the dual
    /// iterate's `theta`, which need not solve the ridge system at the
    /// recovered `(C*, b*)`; the model keeps the re-solved weights.
    pub solver_theta: DVector<f64>,
    pub report: SolverReport,
    pub envelope: MomentEnvelope,
}

/// Builds the envelope of `(x, y)` and solves the robust problem on it.
pub fn fit_regression(x: &MaskedMatrix, y: &[Option<f64>], target_name: &str, cfg: &FitConfig) -> Result<Fit> {
    let envelope = build_envelope(x, y, &cfg.envelope)?;
    fit_envelope(envelope, target_name, &cfg.solver)
}

/// Solves the robust problem on a precomputed envelope.
pub fn fit_envelope(envelope: MomentEnvelope, target_name: &str, cfg: &SolverConfig) -> Result<Fit> {
    let problem = SaddleProblem::from_envelope(&envelope, cfg.lambda)?;
    let (state, report, solver_theta) = match cfg.solver {
        Solver::Admm => {
            let run = admm_run(&problem, &cfg.admm)?;
            (run.state, run.report, run.dual.theta)
        }
        _ => {
            let (state, report) = solve(&problem, cfg)?;
            let theta = state.theta.clone();
            (state, report, theta)
        }
    };
    let model = RegressionModel::from_state(&state, envelope.feature_names.clone(), target_name.to_string(), envelope.target_mean)?;
    Ok(Fit {
        model,
        solver_theta,
        report,
        envelope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub fit: FitConfig,
    /// Subtract each column's available mean before fitting and add it back
    /// afterwards, which acts as an intercept.
    pub center: bool,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            center: false,
        }
    }
}

/// Per-column imputation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub column: String,
    pub imputed_cells: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Fills every missing cell. Column `j` is regressed on all other columns of
/// the original matrix (never on previously imputed values), so the output
/// does not depend on the order in which columns are processed.
pub fn impute(m: &MaskedMatrix, cfg: &ImputeConfig) -> Result<MaskedMatrix> {
    Ok(impute_with_report(m, cfg)?.0)
}

pub fn impute_with_report(m: &MaskedMatrix, cfg: &ImputeConfig) -> Result<(MaskedMatrix, Vec<ColumnReport>)> {
    let d = m.ncols();
    let names = m.column_names();
    let means: Vec<f64> = (0..d)
        .map(|j| {
            let col: Vec<f64> = m.column(j).into_iter().flatten().collect();
            if col.is_empty() {
                Err(Error::EmptyColumn(names[j].clone()))
            } else {
                Ok(col.iter().sum::<f64>() / col.len() as f64)
            }
        })
        .collect::<Result<_>>()?;
    let shift = |j: usize| if cfg.center { means[j] } else { 0.0 };
    let source = if cfg.center {
        let mut vals = m.raw_values().to_vec();
        for (k, v) in vals.iter_mut().enumerate() {
            *v -= means[k % d];
        }
        MaskedMatrix::new(m.nrows(), d, vals, m.mask().to_vec(), names.to_vec())?
    } else {
        m.clone()
    };

    let columns: Vec<(Vec<(usize, f64)>, ColumnReport)> = (0..d)
        .into_par_iter()
        .map(|j| {
            let missing: Vec<usize> = (0..m.nrows()).filter(|&i| !m.is_available(i, j)).collect();
            if missing.is_empty() || d == 1 {
                let fill = missing.iter().map(|&i| (i, means[j])).collect();
                return Ok((
                    fill,
                    ColumnReport {
                        column: names[j].clone(),
                        imputed_cells: missing.len(),
                        iterations: 0,
                        converged: true,
                    },
                ));
            }
            let (x, y) = source.split_target(j);
            let mut fit_cfg = cfg.fit;
            fit_cfg.envelope.seed = rng::derive_seed(cfg.fit.envelope.seed, j as u64);
            let fit = fit_regression(&x, &y, &names[j], &fit_cfg)?;
            let sub = x.select_rows(&missing);
            let preds = predict_batch(&fit.model, &sub)?;
            let fill = missing.iter().zip(preds).map(|(&i, p)| (i, p + shift(j))).collect();
            Ok((
                fill,
                ColumnReport {
                    column: names[j].clone(),
                    imputed_cells: missing.len(),
                    iterations: fit.report.iterations,
                    converged: fit.report.converged,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut values = m.raw_values().to_vec();
    let mut reports = Vec::with_capacity(d);
    for (j, (fill, report)) in columns.into_iter().enumerate() {
        for (i, v) in fill {
            values[i * d + j] = v;
        }
        reports.push(report);
    }
    let out = MaskedMatrix::new(m.nrows(), d, values, vec![true; m.nrows() * d], names.to_vec())?;
    Ok((out, reports))
}

/// Column-mean imputation, the baseline the robust imputer is compared to.
pub fn mean_impute(m: &MaskedMatrix) -> Result<MaskedMatrix> {
    let d = m.ncols();
    let mut values = m.raw_values().to_vec();
    for j in 0..d {
        let col: Vec<f64> = m.column(j).into_iter().flatten().collect();
        if col.is_empty() {
            return Err(Error::EmptyColumn(m.column_names()[j].clone()));
        }
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        for i in 0..m.nrows() {
            if !m.is_available(i, j) {
                values[i * d + j] = mean;
            }
        }
    }
    MaskedMatrix::new(m.nrows(), d, values, vec![true; m.nrows() * d], m.column_names().to_vec())
}

/// NRMSE over the cells that were missing in `masked`, averaged over the
/// columns that had any missing cell.
pub fn imputation_nrmse(truth: &MaskedMatrix, masked: &MaskedMatrix, imputed: &MaskedMatrix) -> Result<f64> {
    if truth.nrows() != masked.nrows() || truth.ncols() != masked.ncols() || imputed.ncols() != masked.ncols() || imputed.nrows() != masked.nrows() {
        return Err(Error::Dimension("truth, masked and imputed shapes differ".into()));
    }
    let mut per_col = BTreeMap::new();
    for j in 0..masked.ncols() {
        let rows: Vec<usize> = (0..masked.nrows()).filter(|&i| !masked.is_available(i, j)).collect();
        if rows.len() < 2 {
            continue;
        }
        let t: Vec<f64> = rows.iter().map(|&i| truth.get(i, j).ok_or(Error::Dimension("truth has missing cells".into()))).collect::<Result<_>>()?;
        let p: Vec<f64> = rows.iter().map(|&i| imputed.get(i, j).unwrap_or(f64::NAN)).collect();
        per_col.insert(j, crate::data::nrmse(&t, &p)?);
    }
    if per_col.is_empty() {
        return Ok(0.0);
    }
    Ok(per_col.values().sum::<f64>() / per_col.len() as f64)
}

/// Synthetic sweep over training-set size: one fixed linear model, nested
/// training prefixes with MCAR cells in features and target, and a complete
/// test set. The default box multiplier is small because the worst-case bias
/// decays like `c / sqrt(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub dim: usize,
    /// Population NRMSE of the true weights.
    pub noise_floor: f64,
    /// MCAR probability for the training cells.
    pub missing: f64,
    pub sizes: Vec<usize>,
    pub test_size: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            noise_floor: 0.01,
            missing: 0.4,
            sizes: vec![500, 2000, 8000, 32000],
            test_size: 2000,
            seed: 0,
            fit: FitConfig {
                solver: SolverConfig {
                    solver: Solver::Admm,
                    lambda: 1e-3,
                    ..SolverConfig::default()
                },
                envelope: EnvelopeConfig {
                    c: 0.25,
                    ..EnvelopeConfig::default()
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub n: usize,
    pub nrmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn consistency_sweep(cfg: &ConsistencyConfig) -> Result<Vec<ConsistencyPoint>> {
    let n_max = cfg.sizes.iter().copied().max().ok_or_else(|| Error::InvalidParameter("no sample sizes".into()))?;
    let spec = crate::data::LinearModelSpec::random(cfg.dim, cfg.noise_floor, cfg.seed)?;
    let (x, y) = spec.sample(n_max, rng::derive_seed(cfg.seed, 1))?;
    let y: Vec<Option<f64>> = y.into_iter().map(Some).collect();
    let full = crate::data::with_target(&x, &y, "y")?;
    let full = crate::data::apply_mcar(&full, cfg.missing, rng::derive_seed(cfg.seed, 2))?;
    let (x_test, y_test) = spec.sample(cfg.test_size, rng::derive_seed(cfg.seed, 3))?;
    cfg.sizes
        .iter()
        .map(|&n| {
            let rows: Vec<usize> = (0..n).collect();
            let (xn, yn) = full.select_rows(&rows).split_target(cfg.dim);
            let fit = fit_regression(&xn, &yn, "y", &cfg.fit)?;
            let pred = predict_batch(&fit.model, &x_test)?;
            Ok(ConsistencyPoint {
                n,
                nrmse: crate::data::nrmse(&y_test, &pred)?,
                iterations: fit.report.iterations,
                converged: fit.report.converged,
            })
        })
        .collect()
}

/// Symmetric part of a model's `C*`, exposed for diagnostics.
pub fn model_covariance(model: &RegressionModel) -> DMatrix<f64> {
    linalg::symmetric_part(&model.c)
}
