//! Command-line front end.
//!
//! Tunable parameters come from flags, then from the `--config` file, then
//! from defaults. The config file is a JSON object with one section per
//! subcommand, keyed by the subcommand name (`"train-regression"`,
//! `"consistency"`, ...). JSON artifacts echo the effective parameters under
//! `"config"`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::admm::AdmmConfig;
use crate::data::{self, load_csv, save_csv, MaskedMatrix, MissingnessSpec, DEFAULT_MISSING_TOKEN};
use crate::error::{Error, Result};
use crate::inference::{
    self, consistency_sweep, ConsistencyConfig, FitConfig, ImputeConfig, RegressionModel, Solver, SolverConfig,
};
use crate::lda::{self, EmConfig, LdaConfig, LdaModel, LdaTrace};
use crate::moments::{self, build_envelope, EnvelopeConfig, MomentEnvelope};
use crate::regression::{self, AscentOptions, SolverReport};

#[derive(Debug, Parser)]
#[command(name = "robust-missing", version, about = "Robust regression, classification and imputation with missing values")]
pub struct Cli {
    /// Worker threads for the parallel stages. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with one parameter section per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask cells of a CSV completely at random or value-dependently.
    GenerateMissing(GenerateArgs),
    /// Write the moment envelope of a CSV as JSON.
    EstimateMoments(EstimateArgs),
    /// Fit a robust linear regression model.
    TrainRegression(TrainRegressionArgs),
    /// Fit a robust discriminant; rows with a missing label go through EM.
    TrainLda(TrainLdaArgs),
    /// Apply a regression or discriminant model to a CSV.
    Predict(PredictArgs),
    /// Fill every missing cell by per-column robust regression.
    Impute(ImputeArgs),
    /// Score predictions or imputations, or run a consistency sweep.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// NRMSE of regression predictions against a target column.
    Regression(EvalRegressionArgs),
    /// Accuracy of predicted labels against a label column.
    Classification(EvalClassificationArgs),
    /// NRMSE over the masked cells, next to the mean-imputation baseline.
    Imputation(EvalImputationArgs),
    /// Test NRMSE of synthetic fits over growing training sets, one JSON line
    /// per size.
    Consistency(ConsistencyArgs),
}

/// Whether the command certified its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Certified,
    /// Artifacts were written but a solver stopped before its tolerance.
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Certified => 0,
            Outcome::NotConverged => 3,
        }
    }
}

pub const EXIT_ERROR: u8 = 1;

/// Reads the section for `name` out of the config file, with defaults for
/// absent keys. Unknown keys are rejected.
fn section<T: DeserializeOwned + Serialize + Default>(config: Option<&Value>, name: &str) -> Result<T> {
    let Some(v) = config.and_then(|c| c.get(name)) else {
        return Ok(T::default());
    };
    let known = serde_json::to_value(T::default())?;
    if let (Some(obj), Some(known)) = (v.as_object(), known.as_object()) {
        if let Some(k) = obj.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::InvalidParameter(format!("unknown key {k:?} in config section {name:?}")));
        }
    }
    Ok(serde_json::from_value(v.clone())?)
}

fn read_config(path: Option<&Path>) -> Result<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    if !v.is_object() {
        return Err(Error::InvalidParameter("config file must hold a JSON object".into()));
    }
    Ok(Some(v))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSettings {
    pub mcar: Option<f64>,
    pub mnar_a: Option<f64>,
    pub mnar_b: f64,
    pub seed: u64,
    pub missing_token: String,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            mcar: None,
            mnar_a: None,
            mnar_b: 0.0,
            seed: 0,
            missing_token: DEFAULT_MISSING_TOKEN.into(),
        }
    }
}

impl GenerateSettings {
    fn spec(&self) -> Result<MissingnessSpec> {
        let spec = match (self.mcar, self.mnar_a) {
            (Some(p), None) => MissingnessSpec::mcar(p, self.seed),
            (None, Some(a)) => MissingnessSpec::mnar(a, self.mnar_b, self.seed),
            _ => return Err(Error::InvalidParameter("give exactly one of --mcar or --mnar-a".into())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeSettings {
    pub c: f64,
    pub k: usize,
    pub seed: u64,
    pub missing_token: String,
}

impl Default for EnvelopeSettings {
    fn default() -> Self {
        let e = EnvelopeConfig::default();
        Self {
            c: e.c,
            k: e.k,
            seed: e.seed,
            missing_token: DEFAULT_MISSING_TOKEN.into(),
        }
    }
}

impl EnvelopeSettings {
    fn envelope(&self) -> Result<EnvelopeConfig> {
        let cfg = EnvelopeConfig {
            k: self.k,
            c: self.c,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Regression parameters. `c` and `k` left unset keep the values of an
/// injected envelope, and the defaults otherwise. `iters` and `tol` left
/// unset keep each solver's own defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSettings {
    pub solver: Solver,
    pub lambda: f64,
    pub c: Option<f64>,
    pub k: Option<usize>,
    pub rho: f64,
    pub iters: Option<usize>,
    pub tol: Option<f64>,
    pub seed: u64,
    pub missing_token: String,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        Self {
            solver: Solver::Pga,
            lambda: 1.0,
            c: None,
            k: None,
            rho: crate::admm::DEFAULT_RHO,
            iters: None,
            tol: None,
            seed: 0,
            missing_token: DEFAULT_MISSING_TOKEN.into(),
        }
    }
}

impl RegressionSettings {
    fn solver_config(&self) -> Result<SolverConfig> {
        let ascent = AscentOptions {
            max_iter: self.iters.unwrap_or(regression::DEFAULT_MAX_ITER),
            step: None,
            tol: self.tol.unwrap_or(regression::DEFAULT_TOLERANCE),
        };
        let admm = AdmmConfig {
            rho: self.rho,
            max_iter: self.iters.unwrap_or(crate::admm::DEFAULT_MAX_ITER),
            tol: self.tol.unwrap_or(crate::admm::DEFAULT_TOLERANCE),
        };
        admm.validate()?;
        if ascent.max_iter == 0 {
            return Err(Error::InvalidParameter("iters must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(SolverConfig {
            solver: self.solver,
            lambda: self.lambda,
            ascent,
            admm,
        })
    }

    fn fit_config(&self) -> Result<FitConfig> {
        let envelope = EnvelopeConfig {
            k: self.k.unwrap_or(moments::DEFAULT_BOOTSTRAP_SAMPLES),
            c: self.c.unwrap_or(moments::DEFAULT_ROBUSTNESS),
            seed: self.seed,
        };
        envelope.validate()?;
        Ok(FitConfig {
            envelope,
            solver: self.solver_config()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ImputeSettings {
    #[serde(flatten)]
    pub regression: RegressionSettings,
    /// Fit on mean-centred columns.
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaSettings {
    pub k: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub delta: Option<f64>,
    pub n_mc: usize,
    pub c: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub intercept: bool,
    pub em_rounds: usize,
    pub gaussian_steps: usize,
    pub retries: usize,
    pub missing_token: String,
}

impl Default for LdaSettings {
    fn default() -> Self {
        let l = LdaConfig::default();
        let e = EmConfig::default();
        Self {
            k: l.k,
            iterations: l.iterations,
            alpha: l.alpha,
            delta: l.delta,
            n_mc: l.n_mc,
            c: l.c,
            bootstrap: l.bootstrap,
            seed: l.seed,
            intercept: l.intercept,
            em_rounds: e.rounds,
            gaussian_steps: e.gaussian_steps,
            retries: e.retries,
            missing_token: DEFAULT_MISSING_TOKEN.into(),
        }
    }
}

impl LdaSettings {
    fn em_config(&self) -> Result<EmConfig> {
        let lda = LdaConfig {
            k: self.k,
            iterations: self.iterations,
            alpha: self.alpha,
            delta: self.delta,
            n_mc: self.n_mc,
            eps: LdaConfig::default().eps,
            c: self.c,
            bootstrap: self.bootstrap,
            seed: self.seed,
            intercept: self.intercept,
        };
        lda.validate()?;
        if self.em_rounds == 0 {
            return Err(Error::InvalidParameter("em_rounds must be at least 1".into()));
        }
        Ok(EmConfig {
            rounds: self.em_rounds,
            gaussian_steps: self.gaussian_steps,
            retries: self.retries,
            lda,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencySettings {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub noise_floor: f64,
    pub missing: f64,
    pub test_size: usize,
    pub seed: u64,
    pub solver: Solver,
    pub lambda: f64,
    pub c: f64,
    pub k: usize,
}

impl Default for ConsistencySettings {
    fn default() -> Self {
        let d = ConsistencyConfig::default();
        Self {
            sizes: d.sizes,
            dim: d.dim,
            noise_floor: d.noise_floor,
            missing: d.missing,
            test_size: d.test_size,
            seed: d.seed,
            solver: d.fit.solver.solver,
            lambda: d.fit.solver.lambda,
            c: d.fit.envelope.c,
            k: d.fit.envelope.k,
        }
    }
}

impl ConsistencySettings {
    fn config(&self) -> Result<ConsistencyConfig> {
        let mut cfg = ConsistencyConfig {
            dim: self.dim,
            noise_floor: self.noise_floor,
            missing: self.missing,
            sizes: self.sizes.clone(),
            test_size: self.test_size,
            seed: self.seed,
            ..ConsistencyConfig::default()
        };
        cfg.fit.solver.solver = self.solver;
        cfg.fit.solver.lambda = self.lambda;
        cfg.fit.envelope.c = self.c;
        cfg.fit.envelope.k = self.k;
        cfg.fit.envelope.validate()?;
        if !(0.0..1.0).contains(&self.missing) {
            return Err(Error::InvalidParameter(format!("missing must be in [0, 1), got {}", self.missing)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Drop each available cell with this probability.
    #[arg(long)]
    pub mcar: Option<f64>,
    /// Slope `a` of the value-dependent rule `Phi(a |z| + b)`.
    #[arg(long)]
    pub mnar_a: Option<f64>,
    /// Offset `b` of the value-dependent rule.
    #[arg(long, allow_hyphen_values = true)]
    pub mnar_b: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub missing_token: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Target column; the cross moments are taken against it.
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub missing_token: Option<String>,
}

#[derive(Debug, Args)]
pub struct RegressionFlags {
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub missing_token: Option<String>,
}

impl RegressionFlags {
    fn apply(&self, s: &mut RegressionSettings) {
        set(&mut s.solver, self.solver);
        set(&mut s.lambda, self.lambda);
        if self.c.is_some() {
            s.c = self.c;
        }
        if self.k.is_some() {
            s.k = self.k;
        }
        set(&mut s.rho, self.rho);
        if self.iters.is_some() {
            s.iters = self.iters;
        }
        if self.tol.is_some() {
            s.tol = self.tol;
        }
        set(&mut s.seed, self.seed);
        set(&mut s.missing_token, self.missing_token.clone());
    }
}

#[derive(Debug, Args)]
pub struct TrainRegressionArgs {
    /// Training CSV; not needed with --envelope.
    #[arg(long, required_unless_present = "envelope")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// Precomputed envelope (artifact or bare JSON) used instead of --input.
    #[arg(long, conflicts_with = "input")]
    pub envelope: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    /// Per-iteration objective and residual as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub flags: RegressionFlags,
}

#[derive(Debug, Args)]
pub struct TrainLdaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column of 0/1 labels; empty cells are unlabeled rows.
    #[arg(long)]
    pub label: String,
    #[arg(long)]
    pub model: PathBuf,
    /// Per-iteration robust objective as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub em_rounds: Option<usize>,
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long)]
    pub missing_token: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Per-column solver summary as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub center: bool,
    #[command(flatten)]
    pub flags: RegressionFlags,
}

#[derive(Debug, Args)]
pub struct EvalRegressionArgs {
    /// CSV holding the true target (and the features when --model is given).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, required_unless_present = "predictions")]
    pub model: Option<PathBuf>,
    /// CSV with a `prediction` column, row-aligned with --truth.
    #[arg(long, conflicts_with = "model")]
    pub predictions: Option<PathBuf>,
    /// Target column in --truth; defaults to the model's target.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
}

#[derive(Debug, Args)]
pub struct EvalClassificationArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub label: String,
    #[arg(long, required_unless_present = "predictions")]
    pub model: Option<PathBuf>,
    /// CSV with a `label` column, row-aligned with --truth.
    #[arg(long, conflicts_with = "model")]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
}

#[derive(Debug, Args)]
pub struct EvalImputationArgs {
    /// Complete ground truth.
    #[arg(long)]
    pub truth: PathBuf,
    /// The input that was imputed; its missing cells are scored.
    #[arg(long)]
    pub masked: PathBuf,
    #[arg(long)]
    pub imputed: PathBuf,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// Training sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise_floor: Option<f64>,
    #[arg(long)]
    pub missing: Option<f64>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Writes `{"kind", "config", <key>: body}` as pretty JSON.
fn write_artifact(path: &Path, kind: &str, config: &impl Serialize, key: &str, body: &impl Serialize) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("kind".into(), json!(kind));
    doc.insert("config".into(), serde_json::to_value(config)?);
    doc.insert(key.into(), serde_json::to_value(body)?);
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Body of an artifact of `kind`, or the whole document when it has no kind.
fn unwrap_artifact(doc: Value, kind: &str, key: &str) -> Result<Value> {
    match doc.get("kind").and_then(Value::as_str) {
        None => Ok(doc),
        Some(k) if k == kind => doc
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Format(format!("{kind} artifact has no {key:?} field"))),
        Some(k) => Err(Error::InvalidParameter(format!("expected a {kind} artifact, found {k}"))),
    }
}

fn load_envelope(path: &Path) -> Result<MomentEnvelope> {
    let body = unwrap_artifact(read_json(path)?, "envelope", "envelope")?;
    MomentEnvelope::from_json(&body.to_string())
}

pub enum AnyModel {
    Regression(RegressionModel),
    Lda(LdaModel),
}

impl AnyModel {
    fn feature_names(&self) -> &[String] {
        match self {
            AnyModel::Regression(m) => &m.feature_names,
            AnyModel::Lda(m) => &m.feature_names,
        }
    }
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    parse_model(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// A model from a `train-*` artifact or from bare model JSON.
pub fn parse_model(text: &str) -> Result<AnyModel> {
    let doc: Value = serde_json::from_str(text)?;
    match doc.get("kind").and_then(Value::as_str) {
        Some("regression") => Ok(AnyModel::Regression(RegressionModel::from_json(&unwrap_artifact(doc, "regression", "model")?.to_string())?)),
        Some("lda") => Ok(AnyModel::Lda(LdaModel::from_json(&unwrap_artifact(doc, "lda", "model")?.to_string())?)),
        Some(k) => Err(Error::InvalidParameter(format!("{k} artifact is not a model"))),
        None => RegressionModel::from_json(text)
            .map(AnyModel::Regression)
            .or_else(|_| LdaModel::from_json(text).map(AnyModel::Lda)),
    }
}

/// Columns of `m` in the order of `names`; fails naming every absent one.
pub fn align_columns(m: &MaskedMatrix, names: &[String]) -> Result<MaskedMatrix> {
    let missing: Vec<String> = names.iter().filter(|n| m.column_index(n).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let idx: Vec<usize> = names.iter().filter_map(|n| m.column_index(n)).collect();
    Ok(m.select_columns(&idx))
}

fn column_by_name(m: &MaskedMatrix, name: &str) -> Result<usize> {
    m.column_index(name).ok_or_else(|| Error::MissingColumns(vec![name.to_string()]))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_lines<T: Serialize>(path: &Path, lines: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for line in lines {
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn print_json(v: &Value) {
    println!("{v}");
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        // a pool that is already set keeps its size; outputs are the same
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = read_config(cli.config.as_deref())?;
    let config = config.as_ref();
    match cli.command {
        Command::GenerateMissing(a) => generate_missing(&a, config),
        Command::EstimateMoments(a) => estimate_moments(&a, config),
        Command::TrainRegression(a) => train_regression(&a, config),
        Command::TrainLda(a) => train_lda(&a, config),
        Command::Predict(a) => predict(&a),
        Command::Impute(a) => impute(&a, config),
        Command::Evaluate(EvaluateCommand::Regression(a)) => evaluate_regression(&a),
        Command::Evaluate(EvaluateCommand::Classification(a)) => evaluate_classification(&a),
        Command::Evaluate(EvaluateCommand::Imputation(a)) => evaluate_imputation(&a),
        Command::Evaluate(EvaluateCommand::Consistency(a)) => evaluate_consistency(&a, config),
    }
}

fn generate_missing(a: &GenerateArgs, config: Option<&Value>) -> Result<Outcome> {
    let mut s: GenerateSettings = section(config, "generate-missing")?;
    if a.mcar.is_some() || a.mnar_a.is_some() {
        s.mcar = a.mcar;
        s.mnar_a = a.mnar_a;
    }
    set(&mut s.mnar_b, a.mnar_b);
    set(&mut s.seed, a.seed);
    set(&mut s.missing_token, a.missing_token.clone());
    let spec = s.spec()?;

    let input = load_csv(&a.input, &s.missing_token)?;
    let out = spec.apply(&input)?;
    if out.mask() == input.mask() {
        fs::copy(&a.input, &a.output).map_err(|e| Error::io(&a.output, e))?;
    } else {
        save_csv(&out, &a.output)?;
    }
    print_json(&json!({
        "missing_fraction": out.missing_fraction(),
        "cells": out.nrows() * out.ncols(),
    }));
    Ok(Outcome::Certified)
}

fn estimate_moments(a: &EstimateArgs, config: Option<&Value>) -> Result<Outcome> {
    let mut s: EnvelopeSettings = section(config, "estimate-moments")?;
    set(&mut s.c, a.c);
    set(&mut s.k, a.k);
    set(&mut s.seed, a.seed);
    set(&mut s.missing_token, a.missing_token.clone());
    let cfg = s.envelope()?;
    let data = load_csv(&a.input, &s.missing_token)?;
    let (x, y) = data.split_target(column_by_name(&data, &a.target)?);
    let env = build_envelope(&x, &y, &cfg)?;
    let echo = json!({ "input": a.input, "target": a.target, "settings": s });
    write_artifact(&a.output, "envelope", &echo, "envelope", &env)?;
    print_json(&json!({
        "dim": env.dim,
        "flagged_pairs": env.flagged_pairs.len(),
        "flagged_cross": env.flagged_cross.len(),
    }));
    Ok(Outcome::Certified)
}

fn write_trace(path: &Path, report: &SolverReport) -> Result<()> {
    let mut w = create(path)?;
    report.write_jsonl(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Regression artifact; also records the solver's own weights, which for
/// ADMM can differ from the model's re-solved `theta`.
fn write_regression_artifact(path: &Path, echo: &Value, fit: &inference::Fit) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("kind".into(), json!("regression"));
    doc.insert("config".into(), echo.clone());
    doc.insert("model".into(), serde_json::to_value(&fit.model)?);
    doc.insert("solver_theta".into(), json!(fit.solver_theta.as_slice()));
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_regression(a: &TrainRegressionArgs, config: Option<&Value>) -> Result<Outcome> {
    let mut s: RegressionSettings = section(config, "train-regression")?;
    a.flags.apply(&mut s);
    let fitted = match (&a.input, &a.envelope) {
        (Some(input), _) => {
            let target = a
                .target
                .as_deref()
                .ok_or_else(|| Error::InvalidParameter("--target is required with --input".into()))?;
            let cfg = s.fit_config()?;
            let data = load_csv(input, &s.missing_token)?;
            let (x, y) = data.split_target(column_by_name(&data, target)?);
            inference::fit_regression(&x, &y, target, &cfg)
        }
        (None, Some(path)) => {
            let mut env = load_envelope(path)?;
            if let Some(c) = s.c {
                if c < 0.0 {
                    return Err(Error::InvalidParameter(format!("c must be nonnegative, got {c}")));
                }
                env = env.with_c(c);
            }
            let target = a.target.as_deref().unwrap_or("y");
            inference::fit_envelope(env, target, &s.solver_config()?)
        }
        (None, None) => return Err(Error::InvalidParameter("give --input or --envelope".into())),
    };
    let fit = match fitted {
        Ok(fit) => fit,
        Err(e @ Error::Divergence { iteration }) => {
            if let Some(trace) = &a.trace {
                write_lines(trace, [json!({ "solver": s.solver, "error": e.to_string(), "iteration": iteration })])?;
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    if let Some(trace) = &a.trace {
        write_trace(trace, &fit.report)?;
    }
    let echo = json!({
        "input": a.input,
        "envelope": a.envelope,
        "target": fit.model.target_name,
        "settings": s,
    });
    write_regression_artifact(&a.model, &echo, &fit)?;
    print_json(&json!({
        "solver": fit.report.solver,
        "iterations": fit.report.iterations,
        "converged": fit.report.converged,
        "objective": fit.report.g_trace.last(),
    }));
    Ok(if fit.report.converged {
        Outcome::Certified
    } else {
        eprintln!("warning: {} stopped after {} iterations without reaching its tolerance", fit.report.solver, fit.report.iterations);
        Outcome::NotConverged
    })
}

#[derive(Serialize)]
struct LdaTraceLine {
    iteration: usize,
    objective: f64,
    gradient_calls: usize,
}

fn lda_trace_lines(trace: &LdaTrace) -> impl Iterator<Item = LdaTraceLine> + '_ {
    trace
        .objective
        .iter()
        .zip(&trace.gradient_calls)
        .enumerate()
        .map(|(t, (&objective, &gradient_calls))| LdaTraceLine {
            iteration: t + 1,
            objective,
            gradient_calls,
        })
}

fn parse_labels(column: &[Option<f64>], name: &str) -> Result<Vec<Option<u8>>> {
    column
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            None => Ok(None),
            Some(v) if *v == 0.0 => Ok(Some(0)),
            Some(v) if *v == 1.0 => Ok(Some(1)),
            Some(v) => Err(Error::Parse {
                row: i + 1,
                column: name.to_string(),
                value: v.to_string(),
            }),
        })
        .collect()
}

fn train_lda(a: &TrainLdaArgs, config: Option<&Value>) -> Result<Outcome> {
    let mut s: LdaSettings = section(config, "train-lda")?;
    set(&mut s.k, a.k);
    set(&mut s.iterations, a.iterations);
    set(&mut s.alpha, a.alpha);
    if a.delta.is_some() {
        s.delta = a.delta;
    }
    set(&mut s.n_mc, a.n_mc);
    set(&mut s.c, a.c);
    set(&mut s.bootstrap, a.bootstrap);
    set(&mut s.seed, a.seed);
    set(&mut s.em_rounds, a.em_rounds);
    if a.no_intercept {
        s.intercept = false;
    }
    set(&mut s.missing_token, a.missing_token.clone());
    let cfg = s.em_config()?;

    let data = load_csv(&a.input, &s.missing_token)?;
    let (x, y) = data.split_target(column_by_name(&data, &a.label)?);
    let labels = parse_labels(&y, &a.label)?;
    let unlabeled = labels.iter().filter(|l| l.is_none()).count();
    let em = lda::em_rnda_train(&x, &labels, &cfg)?;
    if let Some(trace) = &a.trace {
        write_lines(trace, lda_trace_lines(&em.fit.trace))?;
    }
    let echo = json!({ "input": a.input, "label": a.label, "settings": s });
    write_artifact(&a.model, "lda", &echo, "model", &em.fit.model)?;
    print_json(&json!({
        "unlabeled_rows": unlabeled,
        "em_rounds": em.rounds,
        "restarts": em.restarts,
        "final_objective": em.fit.trace.objective.last(),
    }));
    Ok(Outcome::Certified)
}

fn predict(a: &PredictArgs) -> Result<Outcome> {
    let model = load_model(&a.model)?;
    let data = load_csv(&a.input, &a.missing_token)?;
    let x = align_columns(&data, model.feature_names())?;
    let out = match &model {
        AnyModel::Regression(m) => {
            let pred = inference::predict_batch(m, &x)?;
            let rows: Vec<Vec<Option<f64>>> = pred.into_iter().map(|p| vec![Some(p)]).collect();
            MaskedMatrix::from_rows_named(&rows, vec!["prediction".into()])?
        }
        AnyModel::Lda(m) => {
            let rows: Vec<Vec<Option<f64>>> = (0..x.nrows())
                .map(|i| {
                    let p = m.probability(&x.row(i))?;
                    Ok(vec![Some(f64::from(u8::from(p >= m.threshold))), Some(p)])
                })
                .collect::<Result<_>>()?;
            MaskedMatrix::from_rows_named(&rows, vec!["label".into(), "probability".into()])?
        }
    };
    save_csv(&out, &a.output)?;
    print_json(&json!({ "rows": out.nrows() }));
    Ok(Outcome::Certified)
}

fn impute(a: &ImputeArgs, config: Option<&Value>) -> Result<Outcome> {
    let mut s: ImputeSettings = section(config, "impute")?;
    a.flags.apply(&mut s.regression);
    if a.center {
        s.center = true;
    }
    let cfg = ImputeConfig {
        fit: s.regression.fit_config()?,
        center: s.center,
    };
    let data = load_csv(&a.input, &s.regression.missing_token)?;
    let (reports, converged) = if data.is_complete() {
        fs::copy(&a.input, &a.output).map_err(|e| Error::io(&a.output, e))?;
        (Vec::new(), true)
    } else {
        let (out, reports) = inference::impute_with_report(&data, &cfg)?;
        save_csv(&out, &a.output)?;
        let ok = reports.iter().all(|r| r.converged);
        (reports, ok)
    };
    if let Some(path) = &a.report {
        let echo = json!({ "input": a.input, "settings": s });
        write_artifact(path, "imputation", &echo, "columns", &reports)?;
    }
    print_json(&json!({
        "imputed_cells": reports.iter().map(|r| r.imputed_cells).sum::<usize>(),
        "converged": converged,
    }));
    Ok(if converged { Outcome::Certified } else { Outcome::NotConverged })
}

/// Column `name` of a prediction CSV, or its only column.
fn prediction_column(path: &Path, name: &str, token: &str) -> Result<Vec<Option<f64>>> {
    let m = load_csv(path, token)?;
    let j = match m.column_index(name) {
        Some(j) => j,
        None if m.ncols() == 1 => 0,
        None => return Err(Error::MissingColumns(vec![name.to_string()])),
    };
    Ok(m.column(j))
}

fn evaluate_regression(a: &EvalRegressionArgs) -> Result<Outcome> {
    let truth = load_csv(&a.truth, &a.missing_token)?;
    let (pred, target) = match (&a.model, &a.predictions) {
        (Some(path), _) => {
            let model = match load_model(path)? {
                AnyModel::Regression(m) => m,
                AnyModel::Lda(_) => return Err(Error::InvalidParameter("expected a regression model".into())),
            };
            let x = align_columns(&truth, &model.feature_names)?;
            let pred = inference::predict_batch(&model, &x)?.into_iter().map(Some).collect();
            (pred, a.target.clone().unwrap_or(model.target_name))
        }
        (None, Some(path)) => {
            let target = a
                .target
                .clone()
                .ok_or_else(|| Error::InvalidParameter("--target is required with --predictions".into()))?;
            (prediction_column(path, "prediction", &a.missing_token)?, target)
        }
        (None, None) => return Err(Error::InvalidParameter("give --model or --predictions".into())),
    };
    let y = truth.column(column_by_name(&truth, &target)?);
    if y.len() != pred.len() {
        return Err(Error::Dimension(format!("{} predictions for {} rows", pred.len(), y.len())));
    }
    let (t, p): (Vec<f64>, Vec<f64>) = y
        .iter()
        .zip(&pred)
        .filter_map(|(t, p)| Some(((*t)?, (*p)?)))
        .unzip();
    let value = data::nrmse(&t, &p)?;
    print_json(&json!({ "metric": "nrmse", "value": value, "rows": t.len() }));
    Ok(Outcome::Certified)
}

fn evaluate_classification(a: &EvalClassificationArgs) -> Result<Outcome> {
    let truth = load_csv(&a.truth, &a.missing_token)?;
    let pred: Vec<Option<u8>> = match (&a.model, &a.predictions) {
        (Some(path), _) => {
            let model = match load_model(path)? {
                AnyModel::Lda(m) => m,
                AnyModel::Regression(_) => return Err(Error::InvalidParameter("expected an lda model".into())),
            };
            let x = align_columns(&truth, &model.feature_names)?;
            lda::classify_batch(&model, &x)?.into_iter().map(Some).collect()
        }
        (None, Some(path)) => parse_labels(&prediction_column(path, "label", &a.missing_token)?, "label")?,
        (None, None) => return Err(Error::InvalidParameter("give --model or --predictions".into())),
    };
    let y = parse_labels(&truth.column(column_by_name(&truth, &a.label)?), &a.label)?;
    if y.len() != pred.len() {
        return Err(Error::Dimension(format!("{} predictions for {} rows", pred.len(), y.len())));
    }
    let (t, p): (Vec<u8>, Vec<u8>) = y.iter().zip(&pred).filter_map(|(t, p)| Some(((*t)?, (*p)?))).unzip();
    let value = data::accuracy(&t, &p)?;
    print_json(&json!({ "metric": "accuracy", "value": value, "rows": t.len() }));
    Ok(Outcome::Certified)
}

fn evaluate_imputation(a: &EvalImputationArgs) -> Result<Outcome> {
    let truth = load_csv(&a.truth, &a.missing_token)?;
    let masked = load_csv(&a.masked, &a.missing_token)?;
    let imputed = load_csv(&a.imputed, &a.missing_token)?;
    let value = inference::imputation_nrmse(&truth, &masked, &imputed)?;
    let baseline = inference::imputation_nrmse(&truth, &masked, &inference::mean_impute(&masked)?)?;
    print_json(&json!({ "metric": "nrmse", "value": value, "mean_imputation": baseline }));
    Ok(Outcome::Certified)
}

fn evaluate_consistency(a: &ConsistencyArgs, config: Option<&Value>) -> Result<Outcome> {
    let mut s: ConsistencySettings = section(config, "consistency")?;
    set(&mut s.sizes, a.sizes.clone());
    set(&mut s.dim, a.dim);
    set(&mut s.noise_floor, a.noise_floor);
    set(&mut s.missing, a.missing);
    set(&mut s.test_size, a.test_size);
    set(&mut s.seed, a.seed);
    set(&mut s.solver, a.solver);
    set(&mut s.lambda, a.lambda);
    set(&mut s.c, a.c);
    set(&mut s.k, a.k);
    let points = consistency_sweep(&s.config()?)?;
    let converged = points.iter().all(|p| p.converged);
    match &a.output {
        Some(path) => write_lines(path, &points)?,
        None => {
            for p in &points {
                print_json(&serde_json::to_value(p)?);
            }
        }
    }
    Ok(if converged { Outcome::Certified } else { Outcome::NotConverged })
}
