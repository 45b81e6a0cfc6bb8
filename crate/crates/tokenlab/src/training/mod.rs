//! The staged training protocol: two gradient steps from zero on a first
//! split, then full ERM of the readout on a second split.

mod erm;

pub use erm::{erm_objective, solve_erm, Design, ErmOptions, ErmReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{dot, sample_into, FeatureKind, Featurizer, Sample, TaskConfig};
use crate::error::{param, Result};
use crate::losses::{loss_eval, LossSpec};

/// Learning rates, temperature, ridge strength and split ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub eta_b: f64,
    pub eta_w: f64,
    pub eta_q: f64,
    pub beta: f64,
    pub lambda: f64,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha1 > 0.0) {
            return Err(param("alpha0 and alpha1 must be positive"));
        }
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return Err(param("lambda and beta must be nonnegative"));
        }
        let all = [self.eta_b, self.eta_w, self.eta_q, self.beta, self.lambda, self.alpha0, self.alpha1];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(param("schedule entries must be finite"));
        }
        Ok(())
    }

    pub fn n0(&self, d: usize) -> usize {
        (self.alpha0 * d as f64).round().max(1.0) as usize
    }

    pub fn n1(&self, d: usize) -> usize {
        (self.alpha1 * d as f64).round().max(1.0) as usize
    }
}

/// A collection of samples that can be traversed repeatedly.
pub trait SampleSource {
    fn len(&self) -> usize;
    /// `(L, d)`.
    fn shape(&self) -> (usize, usize);
    fn visit(&self, f: &mut dyn FnMut(&Sample) -> Result<()>) -> Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples held in memory.
#[derive(Clone, Debug)]
pub struct Batch {
    pub l: usize,
    pub d: usize,
    pub samples: Vec<Sample>,
}

impl SampleSource for Batch {
    fn len(&self) -> usize {
        self.samples.len()
    }
    fn shape(&self) -> (usize, usize) {
        (self.l, self.d)
    }
    fn visit(&self, f: &mut dyn FnMut(&Sample) -> Result<()>) -> Result<()> {
        self.samples.iter().try_for_each(f)
    }
}

/// A batch that is regenerated from a fixed generator state on every pass,
/// so that large splits never sit in memory.
#[derive(Clone, Debug)]
pub struct GeneratedBatch {
    config: TaskConfig,
    n: usize,
    rng: ChaCha8Rng,
}

impl GeneratedBatch {
    pub fn new(config: TaskConfig, n: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(GeneratedBatch {
            config,
            n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Materializes the batch.
    pub fn collect(&self) -> Result<Batch> {
        let mut samples = Vec::with_capacity(self.n);
        self.visit(&mut |s| {
            samples.push(s.clone());
            Ok(())
        })?;
        Ok(Batch {
            l: self.config.l,
            d: self.config.d,
            samples,
        })
    }
}

impl SampleSource for GeneratedBatch {
    fn len(&self) -> usize {
        self.n
    }
    fn shape(&self) -> (usize, usize) {
        (self.config.l, self.config.d)
    }
    fn visit(&self, f: &mut dyn FnMut(&Sample) -> Result<()>) -> Result<()> {
        let mut rng = self.rng.clone();
        let mut s = Sample {
            x: Vec::new(),
            y: 0,
            v: None,
        };
        for _ in 0..self.n {
            sample_into(&self.config, &mut rng, &mut s)?;
            f(&s)?;
        }
        Ok(())
    }
}

/// `Xᵀ 1_L` for a row-major `L × d` matrix.
fn token_sum(x: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for row in x.chunks_exact(d) {
        for (o, &e) in out.iter_mut().zip(row) {
            *o += e;
        }
    }
}

/// First gradient step on `(w, b)` from the origin:
/// `w¹ = −(η_w/(n₀L)) Σ hᵢ Xᵢᵀ1`, `b¹ = −(η_b/n₀) Σ hᵢ` with `hᵢ = ℓ′(0; yᵢ)`.
pub fn stage12_first_step<S: SampleSource + ?Sized>(batch: &S, schedule: &StepSchedule, loss: LossSpec) -> Result<(Vec<f64>, f64)> {
    schedule.validate()?;
    if batch.is_empty() {
        return Err(param("stage 1-2 needs a nonempty batch"));
    }
    let (l, d) = batch.shape();
    let mut w = vec![0.0; d];
    let mut hsum = 0.0;
    let mut buf = vec![0.0; d];
    batch.visit(&mut |s| {
        let h = loss_eval(loss, 0.0, s.label()).d1;
        hsum += h;
        token_sum(&s.x, d, &mut buf);
        for (wi, &bi) in w.iter_mut().zip(&buf) {
            *wi += h * bi;
        }
        Ok(())
    })?;
    let n = batch.len() as f64;
    let scale = -schedule.eta_w / (n * l as f64);
    w.iter_mut().for_each(|v| *v *= scale);
    Ok((w, -schedule.eta_b * hsum / n))
}

/// Second gradient step, on `q` only:
/// `q² = −(η_q β/(n₀L)) Σ hᵢ Xᵢᵀ(I − 11ᵀ/L) Xᵢ w¹` with
/// `hᵢ = ℓ′(⟨Xᵢᵀ1/L, w¹⟩ + b¹; yᵢ)`.
pub fn stage3_second_step<S: SampleSource + ?Sized>(
    batch: &S,
    w1: &[f64],
    b1: f64,
    schedule: &StepSchedule,
    loss: LossSpec,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    let (l, d) = batch.shape();
    if w1.len() != d {
        return Err(param(format!("w1 has length {}, expected {d}", w1.len())));
    }
    if batch.is_empty() {
        return Err(param("stage 3 needs a nonempty batch"));
    }
    let mut q = vec![0.0; d];
    let mut xw = vec![0.0; l];
    batch.visit(&mut |s| {
        for (k, row) in s.x.chunks_exact(d).enumerate() {
            xw[k] = dot(row, w1);
        }
        let mean = xw.iter().sum::<f64>() / l as f64;
        let h = loss_eval(loss, mean + b1, s.label()).d1;
        for (row, &xk) in s.x.chunks_exact(d).zip(&xw) {
            let c = h * (xk - mean);
            for (qi, &e) in q.iter_mut().zip(row) {
                *qi += c * e;
            }
        }
        Ok(())
    })?;
    let scale = -schedule.eta_q * schedule.beta / (batch.len() as f64 * l as f64);
    q.iter_mut().for_each(|v| *v *= scale);
    Ok(q)
}

/// Solver diagnostics attached to a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Regularized empirical objective at the solution.
    pub train_loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub separable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub featurizer: Featurizer,
    pub w: Vec<f64>,
    pub b: f64,
    pub diagnostics: Diagnostics,
}

impl TrainedModel {
    /// The frozen query vector (empty for the linear baselines).
    pub fn q(&self) -> &[f64] {
        &self.featurizer.q
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Featurizes a batch into a design matrix with a bias column.
pub fn build_design<S: SampleSource + ?Sized>(batch: &S, featurizer: &Featurizer) -> Result<Design> {
    let (l, d) = batch.shape();
    if (l, d) != (featurizer.l, featurizer.d) {
        return Err(param("featurizer shape does not match the batch"));
    }
    let mut design = Design::with_shape(batch.len(), featurizer.dim());
    let mut f = vec![0.0; featurizer.dim()];
    let mut i = 0;
    batch.visit(&mut |s| {
        featurizer.apply_into(&s.x, &mut f)?;
        design.set_row(i, &f, s.label());
        i += 1;
        Ok(())
    })?;
    Ok(design)
}

/// Full ERM of `(w, b)` on frozen features.
pub fn stage4_erm<S: SampleSource + ?Sized>(
    batch: &S,
    featurizer: &Featurizer,
    lambda: f64,
    loss: LossSpec,
    opts: ErmOptions,
) -> Result<TrainedModel> {
    let design = build_design(batch, featurizer)?;
    let report = solve_erm(&design, lambda, loss, opts)?;
    Ok(model_from_report(featurizer.clone(), report))
}

pub fn model_from_report(featurizer: Featurizer, r: ErmReport) -> TrainedModel {
    TrainedModel {
        featurizer,
        w: r.w,
        b: r.b,
        diagnostics: Diagnostics {
            train_loss: r.objective,
            iterations: r.iterations,
            grad_norm: r.grad_norm,
            converged: r.converged,
            separable: r.separable,
        },
    }
}

/// Measured statistics of the first two steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepStats {
    pub b1: f64,
    pub w1_norm: f64,
    pub w1_align: f64,
    pub q2_norm: f64,
    pub q2_align: f64,
    pub s_w: f64,
    pub s_q: f64,
}

fn cosine(align: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        align / norm
    } else {
        0.0
    }
}

/// Runs steps 1-3 on a fresh first split of `round(α₀ d)` samples.
pub fn run_two_steps<R: Rng + ?Sized>(
    config: &TaskConfig,
    schedule: &StepSchedule,
    loss: LossSpec,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, Vec<f64>, TwoStepStats)> {
    config.validate()?;
    schedule.validate()?;
    let d0 = GeneratedBatch::new(config.clone(), schedule.n0(config.d), rng.random())?;
    let (w1, b1) = stage12_first_step(&d0, schedule, loss)?;
    let q2 = stage3_second_step(&d0, &w1, b1, schedule, loss)?;
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let (wn, wa) = (norm(&w1), dot(&w1, &config.xi));
    let (qn, qa) = (norm(&q2), dot(&q2, &config.xi));
    let stats = TwoStepStats {
        b1,
        w1_norm: wn,
        w1_align: wa,
        q2_norm: qn,
        q2_align: qa,
        s_w: cosine(wa, wn),
        s_q: cosine(qa, qn),
    };
    Ok((w1, b1, q2, stats))
}

/// Outcome of the full protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub model: TrainedModel,
    pub stats: TwoStepStats,
}

/// Steps 1-4 for the attention model. The readout is trained on a fresh
/// second split of `round(α₁ d)` samples with `q = q²` frozen.
pub fn run_protocol<R: Rng + ?Sized>(
    config: &TaskConfig,
    schedule: &StepSchedule,
    loss: LossSpec,
    rng: &mut R,
    opts: ErmOptions,
) -> Result<ProtocolOutcome> {
    let (_, _, q2, stats) = run_two_steps(config, schedule, loss, rng)?;
    let featurizer = Featurizer::attention(config.l, config.d, q2, schedule.beta);
    let d1 = GeneratedBatch::new(config.clone(), schedule.n1(config.d), rng.random())?;
    let model = stage4_erm(&d1, &featurizer, schedule.lambda, loss, opts)?;
    Ok(ProtocolOutcome { model, stats })
}

/// Trains a linear baseline on a fresh split of `round(α₁ d)` samples.
pub fn run_baseline<R: Rng + ?Sized>(
    kind: FeatureKind,
    config: &TaskConfig,
    schedule: &StepSchedule,
    loss: LossSpec,
    rng: &mut R,
    opts: ErmOptions,
) -> Result<TrainedModel> {
    let featurizer = match kind {
        FeatureKind::Pooled => Featurizer::pooled(config.l, config.d),
        FeatureKind::Vectorized => Featurizer::vectorized(config.l, config.d),
        _ => return Err(param("baselines are pooled or vectorized")),
    };
    let d1 = GeneratedBatch::new(config.clone(), schedule.n1(config.d), rng.random())?;
    stage4_erm(&d1, &featurizer, schedule.lambda, loss, opts)
}

#[cfg(test)]
mod tests;
