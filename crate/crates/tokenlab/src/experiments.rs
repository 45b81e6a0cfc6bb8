//! Experiment orchestration: JSON configs, theory-vs-simulation runs and
//! CSV comparison tables.
//!
//! A run expands the parameter grid, evaluates the theory once per grid
//! point and unit (a readout model, or the whole point for two-step
//! statistics), and fans the simulation trials out over the rayon pool.
//! Every trial draws from its own generator seeded by
//! `SHA-256(seed, parameter tuple, panel, trial)`, so outputs do not
//! depend on scheduling or on the number of workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data_model::{empirical_test_error, Featurizer, TaskConfig};
use crate::error::{param, Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::theory_errors::{
    capacity, limit_optimal_error, outer_minimize, pooled_law, ridgeless_quadratic, ridgeless_theory,
    sample_scalar_law, vectorized_theory, LimitQuery, Model, OuterOptions, ScalarLaw, TheorySolution,
    DEFAULT_N_MC,
};
use crate::theory_two_step::{predict, Convention};
use crate::training::{run_baseline, run_protocol, run_two_steps, stage4_erm, ErmOptions, GeneratedBatch, StepSchedule};

/// Version string written into every summary.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest `|z|` counted as agreement.
pub const Z_PASS: f64 = 3.0;

/// Relative tolerance for empirical separability thresholds.
pub const CAPACITY_TOL: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    TwoStepCosine,
    ErrorCurves,
    CapacityScan,
    ResidualVsGamma,
    LimitsTable,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::TwoStepCosine => "two_step_cosine",
            ExperimentName::ErrorCurves => "error_curves",
            ExperimentName::CapacityScan => "capacity_scan",
            ExperimentName::ResidualVsGamma => "residual_vs_gamma",
            ExperimentName::LimitsTable => "limits_table",
        }
    }
}

/// Task, schedule and solver parameters of one grid point. Every field has
/// a default, so configs only list what they change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub l: usize,
    pub r: usize,
    pub theta: f64,
    pub pi: f64,
    pub d: usize,
    pub loss: LossKind,
    /// Shared learning rate of the two gradient steps.
    pub eta: f64,
    pub eta_b: Option<f64>,
    pub eta_w: Option<f64>,
    pub eta_q: Option<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Use the same ratio for both splits, taken from `alpha1`.
    pub tie_alphas: bool,
    /// Cosine between a fixed query and the signal direction.
    pub gamma: f64,
    pub q_norm: f64,
    pub models: Vec<Model>,
    pub convention: Convention,
    pub n_test: usize,
    pub n_mc: usize,
    pub snr: f64,
    pub attention_ratio: Option<f64>,
    /// Bisection steps inside the verified threshold bracket.
    pub bisect_steps: usize,
    /// The threshold bracket is `α*·(1 ± probe_span)`; both ends are probed first.
    pub probe_span: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            l: 10,
            r: 1,
            theta: 1.0,
            pi: 0.5,
            d: 1000,
            loss: LossKind::Logistic,
            eta: 0.5,
            eta_b: None,
            eta_w: None,
            eta_q: None,
            beta: 1.0,
            lambda: 1e-5,
            alpha0: 1.0,
            alpha1: 1.0,
            tie_alphas: false,
            gamma: 0.99,
            q_norm: 1.0,
            models: vec![Model::Pooled, Model::Vectorized, Model::Attention],
            convention: Convention::Exact,
            n_test: 10_000,
            n_mc: DEFAULT_N_MC,
            snr: 1.0,
            attention_ratio: None,
            bisect_steps: 0,
            probe_span: 0.1,
        }
    }
}

/// Parameters that may be swept by a grid.
pub const GRID_KEYS: [&str; 15] = [
    "l", "r", "theta", "pi", "d", "eta", "eta_b", "eta_w", "eta_q", "beta", "lambda", "alpha0", "alpha1", "gamma",
    "q_norm",
];

const EXTRA_GRID_KEYS: [&str; 2] = ["snr", "attention_ratio"];

impl Params {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec::new(self.loss)
    }

    pub fn task(&self) -> Result<TaskConfig> {
        TaskConfig::new(self.l, self.r, self.theta, self.pi, self.d)
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            eta_b: self.eta_b.unwrap_or(self.eta),
            eta_w: self.eta_w.unwrap_or(self.eta),
            eta_q: self.eta_q.unwrap_or(self.eta),
            beta: self.beta,
            lambda: self.lambda,
            alpha0: if self.tie_alphas { self.alpha1 } else { self.alpha0 },
            alpha1: self.alpha1,
        }
    }

    fn set(&mut self, key: &str, v: f64) -> Result<()> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
                Ok(v as usize)
            } else {
                Err(config_err(format!("grid.{key}"), format!("{v} is not a whole number")))
            }
        };
        match key {
            "l" => self.l = count(v)?,
            "r" => self.r = count(v)?,
            "d" => self.d = count(v)?,
            "theta" => self.theta = v,
            "pi" => self.pi = v,
            "eta" => self.eta = v,
            "eta_b" => self.eta_b = Some(v),
            "eta_w" => self.eta_w = Some(v),
            "eta_q" => self.eta_q = Some(v),
            "beta" => self.beta = v,
            "lambda" => self.lambda = v,
            "alpha0" => self.alpha0 = v,
            "alpha1" => self.alpha1 = v,
            "gamma" => self.gamma = v,
            "q_norm" => self.q_norm = v,
            "snr" => self.snr = v,
            "attention_ratio" => self.attention_ratio = Some(v),
            _ => return Err(config_err(format!("grid.{key}"), "not a sweepable parameter")),
        }
        Ok(())
    }

    /// Column names and values of the parameter tuple, in a fixed order.
    pub fn tuple(&self) -> Vec<(&'static str, String)> {
        let s = self.schedule();
        let opt = |v: Option<f64>| v.map_or_else(|| "".to_owned(), fmt_f64);
        vec![
            ("l", self.l.to_string()),
            ("r", self.r.to_string()),
            ("theta", fmt_f64(self.theta)),
            ("pi", fmt_f64(self.pi)),
            ("d", self.d.to_string()),
            ("loss", enum_str(&self.loss)),
            ("eta_b", fmt_f64(s.eta_b)),
            ("eta_w", fmt_f64(s.eta_w)),
            ("eta_q", fmt_f64(s.eta_q)),
            ("beta", fmt_f64(self.beta)),
            ("lambda", fmt_f64(self.lambda)),
            ("alpha0", fmt_f64(s.alpha0)),
            ("alpha1", fmt_f64(s.alpha1)),
            ("gamma", fmt_f64(self.gamma)),
            ("q_norm", fmt_f64(self.q_norm)),
            ("convention", enum_str(&self.convention)),
            ("n_test", self.n_test.to_string()),
            ("n_mc", self.n_mc.to_string()),
            ("snr", fmt_f64(self.snr)),
            ("attention_ratio", opt(self.attention_ratio)),
        ]
    }
}

fn default_trials() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// A validated experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    #[serde(default)]
    pub params: Params,
    /// Swept parameters; the run covers their Cartesian product.
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

const TOP_KEYS: [&str; 6] = ["name", "params", "grid", "trials", "seed", "output_dir"];
const PARAM_KEYS: [&str; 25] = [
    "l", "r", "theta", "pi", "d", "loss", "eta", "eta_b", "eta_w", "eta_q", "beta", "lambda", "alpha0", "alpha1",
    "tie_alphas", "gamma", "q_norm", "models", "convention", "n_test", "n_mc", "snr", "attention_ratio",
    "bisect_steps", "probe_span",
];

fn config_err<P: Into<String>, M: Into<String>>(path: P, message: M) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Reads and validates a config file.
pub fn parse_config<P: AsRef<Path>>(path: P) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_spec(&text)
}

/// Parses and validates a config held in memory.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value.as_object().ok_or_else(|| config_err("", "config must be a JSON object"))?;
    let mut unknown: Vec<String> = obj.keys().filter(|k| !TOP_KEYS.contains(&k.as_str())).cloned().collect();
    if let Some(Value::Object(p)) = obj.get("params") {
        unknown.extend(
            p.keys()
                .filter(|k| !PARAM_KEYS.contains(&k.as_str()))
                .map(|k| format!("params.{k}")),
        );
    }
    if !unknown.is_empty() {
        return Err(config_err(
            unknown[0].clone(),
            format!("unknown keys: {}", unknown.join(", ")),
        ));
    }
    let spec: ExperimentSpec = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_err(path, e.into_inner().to_string())
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Parses a bare parameter object, as used by single-shot commands.
pub fn parse_params(text: &str) -> Result<Params> {
    let value: Value = serde_json::from_str(text)?;
    if let Value::Object(p) = &value {
        let unknown: Vec<&str> = p.keys().map(String::as_str).filter(|k| !PARAM_KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(config_err(unknown[0], format!("unknown keys: {}", unknown.join(", "))));
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_err(path, e.into_inner().to_string())
    })
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_err("trials", "trials must be at least 1"));
        }
        if self.grid.is_empty() {
            return Err(config_err("grid", "grid must sweep at least one parameter"));
        }
        for (k, vs) in &self.grid {
            if !GRID_KEYS.contains(&k.as_str()) && !EXTRA_GRID_KEYS.contains(&k.as_str()) {
                return Err(config_err(format!("grid.{k}"), "not a sweepable parameter"));
            }
            if vs.is_empty() {
                return Err(config_err(format!("grid.{k}"), "empty list"));
            }
            if let Some(v) = vs.iter().find(|v| !v.is_finite() && !(k == "snr" && **v == f64::INFINITY)) {
                return Err(config_err(format!("grid.{k}"), format!("{v} is not finite")));
            }
        }
        if self.params.models.is_empty() {
            return Err(config_err("params.models", "no models listed"));
        }
        if self.params.n_test < 100 {
            return Err(config_err("params.n_test", "n_test must be at least 100"));
        }
        if self.params.n_mc == 0 {
            return Err(config_err("params.n_mc", "n_mc must be positive"));
        }
        if !(self.params.probe_span > 0.0 && self.params.probe_span < 1.0) {
            return Err(config_err("params.probe_span", "probe_span must lie in (0, 1)"));
        }
        for p in self.points()? {
            if self.name != ExperimentName::LimitsTable {
                p.task().map_err(|e| config_err("grid", e.to_string()))?;
                p.schedule().validate().map_err(|e| config_err("grid", e.to_string()))?;
            }
        }
        Ok(())
    }

    /// The grid points in a fixed order: keys sorted, last key fastest.
    pub fn points(&self) -> Result<Vec<Params>> {
        let mut out = vec![self.params.clone()];
        for (k, vs) in &self.grid {
            let mut next = Vec::with_capacity(out.len() * vs.len());
            for p in &out {
                for &v in vs {
                    let mut q = p.clone();
                    q.set(k, v)?;
                    next.push(q);
                }
            }
            out = next;
        }
        Ok(out)
    }
}

/// One theory-vs-simulation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub panel: String,
    pub model: Option<Model>,
    pub params: Params,
    pub theory: f64,
    pub theory_stderr: f64,
    /// `NaN` for theory-only panels.
    pub empirical_mean: f64,
    pub empirical_stderr: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub z: f64,
    pub pass: bool,
}

impl ResultRow {
    pub const VALUE_COLUMNS: [&'static str; 8] = [
        "theory",
        "theory_stderr",
        "empirical_mean",
        "empirical_stderr",
        "z",
        "pass",
        "n_trials",
        "n_failed",
    ];

    fn header(&self) -> Vec<String> {
        let mut h = vec!["panel".to_owned(), "model".to_owned()];
        h.extend(self.params.tuple().into_iter().map(|(k, _)| k.to_owned()));
        h.extend(Self::VALUE_COLUMNS.iter().map(|s| (*s).to_owned()));
        h
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![self.panel.clone(), self.model.as_ref().map_or_else(String::new, enum_str)];
        r.extend(self.params.tuple().into_iter().map(|(_, v)| v));
        r.extend([
            fmt_f64(self.theory),
            fmt_f64(self.theory_stderr),
            fmt_f64(self.empirical_mean),
            fmt_f64(self.empirical_stderr),
            fmt_f64(self.z),
            self.pass.to_string(),
            self.n_trials.to_string(),
            self.n_failed.to_string(),
        ]);
        r
    }
}

/// A recorded failure of a theory evaluation or a trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub panel: String,
    pub model: Option<Model>,
    /// `None` for theory failures.
    pub trial: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub index: usize,
    pub params: BTreeMap<String, String>,
    pub wall_clock_s: f64,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub name: ExperimentName,
    pub seed: u64,
    pub trials: usize,
    pub spec: ExperimentSpec,
    pub points: Vec<PointSummary>,
    pub rows: Vec<ResultRow>,
    pub n_pass: usize,
    pub n_fail: usize,
    pub all_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: Summary,
    /// Files written, CSVs first and the summary last.
    pub files: Vec<PathBuf>,
}

/// `{:.16e}`, i.e. 17 significant digits.
fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_owned()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v:.16e}")
    }
}

fn enum_str<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Seed of the generator for `(seed, tuple, tag, index)`.
pub fn trial_seed(seed: u64, params: &Params, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for (k, v) in params.tuple() {
        h.update(k.as_bytes());
        h.update([0x1f]);
        h.update(v.as_bytes());
        h.update([0x1e]);
    }
    h.update(tag.as_bytes());
    h.update([0x1d]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn rng_for(seed: u64, params: &Params, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(seed, params, tag, index))
}

/// `(empirical − theory)` over the combined standard error.
pub fn z_score(theory: f64, theory_se: f64, mean: f64, se: f64) -> f64 {
    let s = (theory_se * theory_se + se * se).sqrt();
    if s.is_nan() {
        f64::NAN
    } else if s > 0.0 {
        (mean - theory) / s
    } else if mean == theory {
        0.0
    } else {
        f64::INFINITY.copysign(mean - theory)
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

fn unit_tag(panel_group: &str, model: Option<Model>) -> String {
    match model {
        Some(m) => format!("{panel_group}/{}", enum_str(&m)),
        None => panel_group.to_owned(),
    }
}

/// Query with the requested cosine to `ξ` and norm `q_norm`; the orthogonal
/// part is uniform on the sphere.
pub fn aligned_query<R: Rng + ?Sized>(config: &TaskConfig, gamma: f64, q_norm: f64, rng: &mut R) -> Vec<f64> {
    let d = config.d;
    let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let along: f64 = u.iter().zip(&config.xi).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(&config.xi).for_each(|(a, b)| *a -= along * b);
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let perp = (1.0 - gamma * gamma).max(0.0).sqrt();
    u.iter()
        .zip(&config.xi)
        .map(|(a, b)| q_norm * (gamma * b + if n > 0.0 { perp * a / n } else { 0.0 }))
        .collect()
}

/// Dense factorizations up to a little over the default size, so that
/// thresholds probed at `p = 2d` stay on the direct path.
fn erm_options() -> ErmOptions {
    ErmOptions {
        direct_max_dim: 4100,
        ..ErmOptions::default()
    }
}

/// State-equation solution for a scalar law, ridgeless when `λ = 0`.
fn scalar_theory(law: &ScalarLaw, alpha1: f64, lambda: f64, loss: LossSpec) -> Result<TheorySolution> {
    if lambda == 0.0 {
        ridgeless_theory(law, alpha1, loss, &OuterOptions::default())
    } else {
        outer_minimize(law, alpha1, lambda, loss)
    }
}

fn fixed_query_law(p: &Params, config: &TaskConfig, seed: u64) -> Result<ScalarLaw> {
    let mut rng = rng_for(seed, p, "law", 0);
    sample_scalar_law(p.gamma, p.q_norm, p.beta, config, p.n_mc, &mut rng)
}

/// Theory values with standard errors, one per panel of the unit.
type TheoryOut = Vec<(f64, f64)>;

fn theory_two_step(p: &Params) -> Result<TheoryOut> {
    let t = predict(&p.schedule(), p.loss_spec(), &p.task()?, p.schedule().alpha0, p.convention)?;
    Ok(vec![(t.s_w, 0.0), (t.s_q, 0.0)])
}

fn theory_error_curve(p: &Params, model: Model, seed: u64) -> Result<TheoryOut> {
    let config = p.task()?;
    let s = p.schedule();
    let loss = p.loss_spec();
    let sol = match model {
        Model::Pooled => scalar_theory(&pooled_law(&config)?, s.alpha1, s.lambda, loss)?,
        Model::Vectorized => vectorized_theory(&config, s.alpha1, s.lambda, loss)?.theory,
        Model::Attention => {
            let t = predict(&s, loss, &config, s.alpha0, p.convention)?;
            let mut rng = rng_for(seed, p, "law", 0);
            let law = sample_scalar_law(t.s_q, t.q2_norm, s.beta, &config, p.n_mc, &mut rng)?;
            scalar_theory(&law, s.alpha1, s.lambda, loss)?
        }
        Model::ApproxAttention => return Err(param("no error theory for the approximate attention readout")),
    };
    Ok(vec![(sol.e_test, sol.e_test_se), (sol.e_train, 0.0)])
}

fn trial_error_curve(p: &Params, model: Model, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let config = p.task()?;
    let s = p.schedule();
    let loss = p.loss_spec();
    let trained = match model {
        Model::Pooled => run_baseline(
            crate::data_model::FeatureKind::Pooled,
            &config,
            &s,
            loss,
            rng,
            erm_options(),
        )?,
        Model::Vectorized => run_baseline(
            crate::data_model::FeatureKind::Vectorized,
            &config,
            &s,
            loss,
            rng,
            erm_options(),
        )?,
        Model::Attention => run_protocol(&config, &s, loss, rng, erm_options())?.model,
        Model::ApproxAttention => return Err(param("approximate attention is not simulated here")),
    };
    let (err, _) = empirical_test_error(&trained.featurizer, &trained.w, trained.b, &config, p.n_test, rng)?;
    Ok(vec![err, trained.diagnostics.train_loss])
}

fn fixed_featurizer(p: &Params, model: Model, config: &TaskConfig, rng: &mut ChaCha8Rng) -> Result<Featurizer> {
    Ok(match model {
        Model::Pooled => Featurizer::pooled(config.l, config.d),
        Model::Vectorized => Featurizer::vectorized(config.l, config.d),
        Model::Attention => {
            let q = aligned_query(config, p.gamma, p.q_norm, rng);
            Featurizer::attention(config.l, config.d, q, p.beta)
        }
        Model::ApproxAttention => return Err(param("approximate attention is not simulated here")),
    })
}

/// Trains a readout on fixed features at ratio `alpha` and reports the
/// test error, the training objective and the separability flag.
fn train_fixed(p: &Params, model: Model, alpha: f64, lambda: f64, rng: &mut ChaCha8Rng, test: bool) -> Result<(f64, f64, bool)> {
    let config = p.task()?;
    let f = fixed_featurizer(p, model, &config, rng)?;
    let n = (alpha * config.d as f64).round().max(1.0) as usize;
    let batch = GeneratedBatch::new(config.clone(), n, rng.random())?;
    let m = stage4_erm(&batch, &f, lambda, p.loss_spec(), erm_options())?;
    let (err, _) = if m.diagnostics.separable || !test {
        (f64::NAN, 0.0)
    } else {
        empirical_test_error(&m.featurizer, &m.w, m.b, &config, p.n_test, rng)?
    };
    Ok((err, m.diagnostics.train_loss, m.diagnostics.separable))
}

/// Separable fraction over `trials` draws at ratio `alpha`.
fn separable_fraction(p: &Params, model: Model, alpha: f64, trials: usize, seed: u64, tag: &str) -> (f64, usize, Vec<String>) {
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, p, tag, t as u64);
            let mut q = p.clone();
            q.loss = LossKind::Logistic;
            train_fixed(&q, model, alpha, 0.0, &mut rng, false).map(|r| r.2)
        })
        .collect();
    let mut hits = 0usize;
    let mut ok = 0usize;
    let mut errs = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => {
                ok += 1;
                hits += usize::from(s);
            }
            Err(e) => errs.push(e.to_string()),
        }
    }
    let frac = if ok > 0 { hits as f64 / ok as f64 } else { f64::NAN };
    (frac, ok, errs)
}

fn capacity_theory(p: &Params, model: Model, seed: u64) -> Result<f64> {
    let config = p.task()?;
    let law = if model == Model::Attention {
        Some(fixed_query_law(p, &config, seed)?)
    } else {
        None
    };
    Ok(capacity(model, &config, law.as_ref())?.alpha_star)
}

struct PointOutput {
    rows: Vec<ResultRow>,
    failures: Vec<Failure>,
}

fn row(panel: &str, model: Option<Model>, p: &Params, theory: (f64, f64), values: &[f64], failed: usize) -> ResultRow {
    let (mean, se) = mean_stderr(values);
    let z = z_score(theory.0, theory.1, mean, se);
    ResultRow {
        panel: panel.to_owned(),
        model,
        params: p.clone(),
        theory: theory.0,
        theory_stderr: theory.1,
        empirical_mean: mean,
        empirical_stderr: se,
        n_trials: values.len(),
        n_failed: failed,
        z,
        pass: z.abs() <= Z_PASS,
    }
}

fn theory_only(panel: &str, model: Option<Model>, p: &Params, value: f64) -> ResultRow {
    ResultRow {
        panel: panel.to_owned(),
        model,
        params: p.clone(),
        theory: value,
        theory_stderr: 0.0,
        empirical_mean: f64::NAN,
        empirical_stderr: f64::NAN,
        n_trials: 0,
        n_failed: 0,
        z: f64::NAN,
        pass: true,
    }
}

/// Theory for a unit plus `trials` simulations, each producing one value per
/// panel.
fn compare_unit<T, S>(
    panels: &[&str],
    model: Option<Model>,
    p: &Params,
    trials: usize,
    seed: u64,
    theory: T,
    sim: S,
) -> PointOutput
where
    T: Fn() -> Result<TheoryOut> + Send + Sync,
    S: Fn(&mut ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    let tag = unit_tag(panels[0], model);
    let (th, runs) = rayon::join(theory, || {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(seed, p, &tag, t as u64);
                sim(&mut rng)
            })
            .collect::<Vec<_>>()
    });
    let mut failures = Vec::new();
    let th = th.unwrap_or_else(|e| {
        failures.push(Failure {
            panel: panels[0].to_owned(),
            model,
            trial: None,
            message: e.to_string(),
        });
        vec![(f64::NAN, 0.0); panels.len()]
    });
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); panels.len()];
    for (t, r) in runs.into_iter().enumerate() {
        match r {
            Ok(v) => values.iter_mut().zip(v).for_each(|(col, x)| col.push(x)),
            Err(e) => failures.push(Failure {
                panel: panels[0].to_owned(),
                model,
                trial: Some(t),
                message: e.to_string(),
            }),
        }
    }
    let failed = failures.iter().filter(|f| f.trial.is_some()).count();
    let rows = panels
        .iter()
        .zip(th)
        .zip(&values)
        .map(|((panel, t), v)| {
            let mut r = row(panel, model, p, t, v, failed);
            if !t.0.is_finite() {
                r.pass = false;
            }
            r
        })
        .collect();
    PointOutput { rows, failures }
}

fn run_point(name: ExperimentName, p: &Params, trials: usize, seed: u64) -> PointOutput {
    let mut out = PointOutput {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    let mut absorb = |o: PointOutput| {
        out.rows.extend(o.rows);
        out.failures.extend(o.failures);
    };
    match name {
        ExperimentName::TwoStepCosine => absorb(compare_unit(
            &["s_w", "s_q"],
            None,
            p,
            trials,
            seed,
            || theory_two_step(p),
            |rng| {
                let (_, _, _, st) = run_two_steps(&p.task()?, &p.schedule(), p.loss_spec(), rng)?;
                Ok(vec![st.s_w, st.s_q])
            },
        )),
        ExperimentName::ErrorCurves => {
            let units: Vec<PointOutput> = p
                .models
                .par_iter()
                .map(|&m| {
                    compare_unit(
                        &["e_test", "e_train"],
                        Some(m),
                        p,
                        trials,
                        seed,
                        || theory_error_curve(p, m, seed),
                        |rng| trial_error_curve(p, m, rng),
                    )
                })
                .collect();
            units.into_iter().for_each(&mut absorb);
        }
        ExperimentName::ResidualVsGamma => {
            let units: Vec<PointOutput> = p
                .models
                .par_iter()
                .map(|&m| residual_unit(p, m, trials, seed))
                .collect();
            units.into_iter().for_each(&mut absorb);
        }
        ExperimentName::CapacityScan => {
            let units: Vec<PointOutput> = p
                .models
                .par_iter()
                .map(|&m| capacity_unit(p, m, trials, seed))
                .collect();
            units.into_iter().for_each(&mut absorb);
        }
        ExperimentName::LimitsTable => {
            for &m in &p.models {
                let q = LimitQuery {
                    model: m,
                    snr: p.snr,
                    pi: p.pi,
                    attention_ratio: p.attention_ratio,
                };
                match limit_optimal_error(&q) {
                    Ok(r) => {
                        absorb(PointOutput {
                            rows: vec![
                                theory_only("limit_error", Some(m), p, r.value.unwrap_or(f64::NAN)),
                                theory_only("strictly_positive", Some(m), p, f64::from(u8::from(r.strictly_positive))),
                            ],
                            failures: Vec::new(),
                        });
                    }
                    Err(e) => absorb(PointOutput {
                        rows: Vec::new(),
                        failures: vec![Failure {
                            panel: "limit_error".to_owned(),
                            model: Some(m),
                            trial: None,
                            message: e.to_string(),
                        }],
                    }),
                }
            }
        }
    }
    out
}

/// Residual error as `α₁ → ∞` (theory only) and the finite-`α₁` error of
/// a readout on a fixed query with cosine `γ`.
fn residual_unit(p: &Params, model: Model, trials: usize, seed: u64) -> PointOutput {
    let config = match p.task() {
        Ok(c) => c,
        Err(e) => {
            return PointOutput {
                rows: Vec::new(),
                failures: vec![Failure {
                    panel: "e_test_inf".to_owned(),
                    model: Some(model),
                    trial: None,
                    message: e.to_string(),
                }],
            }
        }
    };
    let law = if model == Model::Attention {
        fixed_query_law(p, &config, seed).ok()
    } else {
        None
    };
    let mut failures = Vec::new();
    let inf = match ridgeless_quadratic(model, &config, law.as_ref()) {
        Ok(r) => r.e_test_inf,
        Err(e) => {
            failures.push(Failure {
                panel: "e_test_inf".to_owned(),
                model: Some(model),
                trial: None,
                message: e.to_string(),
            });
            f64::NAN
        }
    };
    let mut rows = vec![theory_only("e_test_inf", Some(model), p, inf)];
    if !inf.is_finite() {
        rows[0].pass = false;
    }
    let loss = p.loss_spec();
    let finite = compare_unit(
        &["e_test"],
        Some(model),
        p,
        trials,
        seed,
        || {
            let s = match model {
                Model::Pooled => scalar_theory(&pooled_law(&config)?, p.alpha1, p.lambda, loss)?,
                Model::Vectorized => vectorized_theory(&config, p.alpha1, p.lambda, loss)?.theory,
                Model::Attention => scalar_theory(
                    law.as_ref().ok_or_else(|| param("scalar law unavailable"))?,
                    p.alpha1,
                    p.lambda,
                    loss,
                )?,
                Model::ApproxAttention => return Err(param("no error theory for the approximate attention readout")),
            };
            Ok(vec![(s.e_test, s.e_test_se)])
        },
        |rng| Ok(vec![train_fixed(p, model, p.alpha1, p.lambda, rng, true)?.0]),
    );
    rows.extend(finite.rows);
    failures.extend(finite.failures);
    PointOutput { rows, failures }
}

/// Predicted threshold against the majority separability vote at the ends of
/// `α*·(1 ± probe_span)`, refined by bisection when the ends disagree.
fn capacity_unit(p: &Params, model: Model, trials: usize, seed: u64) -> PointOutput {
    let mut failures = Vec::new();
    let star = match capacity_theory(p, model, seed) {
        Ok(a) => a,
        Err(e) => {
            failures.push(Failure {
                panel: "alpha_star".to_owned(),
                model: Some(model),
                trial: None,
                message: e.to_string(),
            });
            return PointOutput {
                rows: vec![ResultRow {
                    pass: false,
                    ..theory_only("alpha_star", Some(model), p, f64::NAN)
                }],
                failures,
            };
        }
    };
    let (mut lo, mut hi) = (star * (1.0 - p.probe_span), star * (1.0 + p.probe_span));
    let mut n_ok = 0usize;
    let mut probe = |step: usize, alpha: f64, failures: &mut Vec<Failure>| {
        let tag = format!("{}/probe{step}", unit_tag("alpha_star", Some(model)));
        let (frac, ok, errs) = separable_fraction(p, model, alpha, trials, seed, &tag);
        n_ok += ok;
        failures.extend(errs.into_iter().map(|message| Failure {
            panel: "alpha_star".to_owned(),
            model: Some(model),
            trial: Some(step),
            message,
        }));
        frac
    };
    // The bracket ends are checked first, so a pass certifies that the
    // majority flips inside it.
    let below = probe(0, lo, &mut failures);
    let above = probe(1, hi, &mut failures);
    let bracketed = below >= 0.5 && above < 0.5;
    if bracketed {
        for step in 0..p.bisect_steps {
            let mid = 0.5 * (lo + hi);
            let frac = probe(step + 2, mid, &mut failures);
            if frac.is_nan() {
                break;
            }
            if frac >= 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let (emp, half) = if bracketed {
        (0.5 * (lo + hi), 0.5 * (hi - lo))
    } else {
        (f64::NAN, f64::NAN)
    };
    let row = ResultRow {
        panel: "alpha_star".to_owned(),
        model: Some(model),
        params: p.clone(),
        theory: star,
        theory_stderr: 0.0,
        empirical_mean: emp,
        empirical_stderr: half,
        n_trials: n_ok,
        n_failed: failures.len(),
        z: z_score(star, 0.0, emp, half),
        pass: bracketed && (emp / star - 1.0).abs() <= CAPACITY_TOL,
    };
    PointOutput {
        rows: vec![row],
        failures,
    }
}

/// Computes every grid point without touching the filesystem.
pub fn compute(spec: &ExperimentSpec) -> Result<Summary> {
    spec.validate()?;
    let points = spec.points()?;
    let outs: Vec<(PointOutput, f64)> = points
        .par_iter()
        .map(|p| {
            let start = Instant::now();
            let o = run_point(spec.name, p, spec.trials, spec.seed);
            (o, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (i, ((o, secs), p)) in outs.into_iter().zip(&points).enumerate() {
        summaries.push(PointSummary {
            index: i,
            params: p.tuple().into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
            wall_clock_s: secs,
            failures: o.failures,
        });
        rows.extend(o.rows);
    }
    let n_pass = rows.iter().filter(|r| r.pass).count();
    let n_fail = rows.len() - n_pass;
    let failed_points = summaries.iter().any(|s| !s.failures.is_empty());
    Ok(Summary {
        version: VERSION.to_owned(),
        name: spec.name,
        seed: spec.seed,
        trials: spec.trials,
        spec: spec.clone(),
        points: summaries,
        rows,
        n_pass,
        n_fail,
        all_pass: n_fail == 0 && !failed_points,
    })
}

/// Writes one CSV per panel and `summary.json` into `dir`.
pub fn write_report(summary: &Summary, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut panels: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in &summary.rows {
        panels.entry(r.panel.as_str()).or_default().push(r);
    }
    let mut files = Vec::new();
    for (panel, rows) in panels {
        let path = dir.join(format!("{}_{panel}.csv", summary.name.as_str()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(rows[0].header())?;
        for r in rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
        files.push(path);
    }
    let path = dir.join(format!("{}_summary.json", summary.name.as_str()));
    fs::write(&path, serde_json::to_string_pretty(summary)?)?;
    files.push(path);
    Ok(files)
}

/// Runs the experiment and writes its outputs to `spec.output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunReport> {
    let summary = compute(spec)?;
    let files = write_report(&summary, &spec.output_dir)?;
    Ok(RunReport { summary, files })
}

/// One joined pair of CSV rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub key: BTreeMap<String, String>,
    pub theory: f64,
    pub empirical_mean: f64,
    pub empirical_stderr: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Keys present in only one of the inputs, rendered as `k=v` lists.
    pub unmatched: Vec<String>,
}

impl Comparison {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Columns that carry values rather than parameters.
const VALUE_KEYS: [&str; 10] = [
    "value",
    "stderr",
    "theory",
    "theory_stderr",
    "empirical_mean",
    "empirical_stderr",
    "z",
    "pass",
    "n_trials",
    "n_failed",
];

type Keyed = BTreeMap<Vec<(String, String)>, (f64, f64)>;

fn normalize(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if !cell.is_empty() => format!("{v:?}"),
        _ => cell.to_owned(),
    }
}

/// Reads a CSV into `key → (value, stderr)`. The value is the `value`
/// column, else a finite `empirical_mean`, else `theory`.
fn read_keyed(path: &Path) -> Result<(BTreeSet<String>, Keyed)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let idx = |name: &str| header.iter().position(|h| h == name);
    let keys: Vec<usize> = (0..header.len()).filter(|&i| !VALUE_KEYS.contains(&header[i].as_str())).collect();
    let num = |rec: &csv::StringRecord, i: Option<usize>| -> Option<f64> { i.and_then(|i| rec.get(i)).and_then(|s| s.parse().ok()) };
    let mut out = Keyed::new();
    for rec in rdr.records() {
        let rec = rec?;
        let key: Vec<(String, String)> = keys.iter().map(|&i| (header[i].clone(), normalize(&rec[i]))).collect();
        let val = if let Some(v) = num(&rec, idx("value")) {
            (v, num(&rec, idx("stderr")).unwrap_or(0.0))
        } else if let Some(v) = num(&rec, idx("empirical_mean")).filter(|v| v.is_finite()) {
            (v, num(&rec, idx("empirical_stderr")).filter(|s| s.is_finite()).unwrap_or(0.0))
        } else if let Some(v) = num(&rec, idx("theory")) {
            (v, num(&rec, idx("theory_stderr")).unwrap_or(0.0))
        } else {
            return Err(param(format!("{}: row without a value column", path.display())));
        };
        out.insert(key, val);
    }
    let names = keys.iter().map(|&i| header[i].clone()).collect();
    Ok((names, out))
}

/// Joins two CSVs on their parameter columns. `a` provides the reference
/// values and `b` the measurements; a row passes when `|z| ≤ 3`.
pub fn compare<P: AsRef<Path>, Q: AsRef<Path>>(a: P, b: Q) -> Result<Comparison> {
    let (ka, ra) = read_keyed(a.as_ref())?;
    let (kb, rb) = read_keyed(b.as_ref())?;
    if ka != kb {
        let only: Vec<&String> = ka.symmetric_difference(&kb).collect();
        return Err(param(format!("parameter columns differ: {only:?}")));
    }
    let render = |k: &[(String, String)]| k.iter().map(|(a, b)| format!("{a}={b}")).collect::<Vec<_>>().join(",");
    let mut out = Comparison::default();
    for (k, &(t, ts)) in &ra {
        match rb.get(k) {
            Some(&(m, ms)) => {
                let z = z_score(t, ts, m, ms);
                out.rows.push(ComparisonRow {
                    key: k.iter().cloned().collect(),
                    theory: t,
                    empirical_mean: m,
                    empirical_stderr: ms,
                    z,
                    pass: z.abs() <= Z_PASS,
                });
            }
            None => out.unmatched.push(render(k)),
        }
    }
    out.unmatched.extend(rb.keys().filter(|k| !ra.contains_key(*k)).map(|k| render(k)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let s = parse_spec(r#"{"name": "two_step_cosine", "grid": {"alpha0": [1, 2]}}"#).unwrap();
        assert_eq!(s.trials, 10);
        assert_eq!(s.seed, 0);
        assert_eq!(s.points().unwrap().len(), 2);
    }

    #[test]
    fn zero_trials_names_the_key() {
        let e = parse_spec(r#"{"name": "two_step_cosine", "grid": {"alpha0": [1]}, "trials": 0}"#).unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "trials"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_listed() {
        let e = parse_spec(r#"{"name": "error_curves", "grid": {"alpha1": [1]}, "foo": 1, "params": {"bar": 2}}"#)
            .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("foo") && msg.contains("params.bar"), "{msg}");
    }

    #[test]
    fn type_errors_carry_the_path() {
        let e = parse_spec(r#"{"name": "error_curves", "grid": {"alpha1": [1]}, "params": {"theta": "big"}}"#)
            .unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "params.theta"),
            other => panic!("{other:?}"),
        }
        let e = parse_spec(r#"{"name": "nope", "grid": {"alpha1": [1]}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "name"), "{e}");
        let e = parse_spec(r#"{"name": "error_curves", "grid": {"l": [2.5]}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "grid.l"), "{e}");
    }

    #[test]
    fn first_figure_config_echoes_values() {
        let s = parse_spec(
            r#"{"name": "two_step_cosine",
                "params": {"l": 10, "r": 3, "pi": 0.2, "theta": 6, "eta": 0.5, "loss": "logistic", "d": 1000},
                "grid": {"alpha0": [1, 2, 4, 8, 16]}}"#,
        )
        .unwrap();
        let p = &s.params;
        assert_eq!((p.l, p.r, p.d), (10, 3, 1000));
        assert_eq!((p.pi, p.theta, p.eta), (0.2, 6.0, 0.5));
        let alphas: Vec<f64> = s.points().unwrap().iter().map(|q| q.alpha0).collect();
        assert_eq!(alphas, vec![1.0, 2.0, 4.0, 8.0, 16.0]);
    }

    #[test]
    fn seeds_depend_on_every_input() {
        let p = Params::default();
        let base = trial_seed(1, &p, "x", 0);
        assert_eq!(base, trial_seed(1, &p, "x", 0));
        assert_ne!(base, trial_seed(2, &p, "x", 0));
        assert_ne!(base, trial_seed(1, &p, "y", 0));
        assert_ne!(base, trial_seed(1, &p, "x", 1));
        let q = Params { theta: 2.0, ..p };
        assert_ne!(base, trial_seed(1, &q, "x", 0));
    }

    #[test]
    fn aligned_query_has_requested_geometry() {
        let c = TaskConfig::new(3, 1, 1.0, 0.5, 50).unwrap();
        let q = aligned_query(&c, 0.6, 2.0, &mut ChaCha8Rng::seed_from_u64(0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 2.0).abs() < 1e-12);
        assert!((q[0] / n - 0.6).abs() < 1e-12);
    }

    #[test]
    fn z_scores() {
        assert_eq!(z_score(1.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0, 2.0, 0.5), 2.0);
        assert!((z_score(0.0, 3.0, 5.0, 4.0) - 1.0).abs() < 1e-15);
        assert_eq!(z_score(0.0, 0.0, 1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = 0.1 + 0.2;
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert_eq!(s.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    }
}
