//! Deterministic limits of the first two gradient steps.
//!
//! After step 1-2 the readout `w¹` has norm `γ₁` and overlap `γ₂` with the
//! signal. After step 3 the query `q²` has norm and overlap given by four
//! moments `E₁..E₄` of `c = ℓ′(m, y)`, where `m = ⟨Xᵀ1/L, w¹⟩ + b¹` is a
//! two-component Gaussian mixture conditioned on the label.
//!
//! Two conventions are offered for the law of `m` and the `q²` formulas.
//! [`Convention::Literal`] reproduces the published displays as printed.
//! [`Convention::Exact`] is the law obtained by carrying the self-overlap
//! of each sample with `w¹` and the `π` weight of the positive branch
//! through the computation; it agrees with finite-`d` simulation where the
//! literal form does not.

use serde::{Deserialize, Serialize};

use crate::data_model::TaskConfig;
use crate::error::Result;
use crate::losses::{c_loss, loss_eval, LossSpec};
use crate::numerics::{gauss_hermite, QuadratureRule};
use crate::training::StepSchedule;

/// Quadrature order for the two mixture branches.
pub const MIXTURE_ORDER: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Literal,
    Exact,
}

/// Conditional Gaussian laws of `m` given `y = ∓1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureLaw {
    pub mean_minus: f64,
    pub var_minus: f64,
    pub mean_plus: f64,
    pub var_plus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureMoments {
    /// `E[c]`
    pub e1: f64,
    /// `E[c | y = 1]`
    pub e2: f64,
    /// `E[c²]`
    pub e3: f64,
    /// `E[c² | y = 1]`
    pub e4: f64,
}

fn ratio(config: &TaskConfig) -> f64 {
    config.r as f64 / config.l as f64
}

/// Law of `m` in the literal convention.
pub fn mixture_law(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig, alpha0: f64) -> MixtureLaw {
    mixture_law_with(schedule, loss, config, alpha0, Convention::Literal)
}

pub fn mixture_law_with(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig, alpha0: f64, conv: Convention) -> MixtureLaw {
    let c = c_loss(loss);
    let l = config.l as f64;
    let (ew, pi, th) = (schedule.eta_w, config.pi, config.theta);
    let rl = ratio(config);
    let base = c * schedule.eta_b * (2.0 * pi - 1.0);
    match conv {
        Convention::Literal => {
            let var = c * c * ew * ew / (alpha0 * l * l);
            MixtureLaw {
                mean_minus: base - c * ew / alpha0,
                var_minus: var,
                mean_plus: base + c * ew * (1.0 / alpha0 + th * th * rl * rl),
                var_plus: var,
            }
        }
        Convention::Exact => {
            let w = predict_w1(schedule, loss, config, alpha0);
            let var = w.gamma1 * w.gamma1 / l;
            let self_term = c * ew / (alpha0 * l);
            MixtureLaw {
                mean_minus: base - self_term,
                var_minus: var,
                mean_plus: base + self_term + c * ew * pi * th * th * rl * rl,
                var_plus: var,
            }
        }
    }
}

fn branch(rule: &QuadratureRule, loss: LossSpec, mean: f64, var: f64, y: f64) -> (f64, f64) {
    let sd = var.max(0.0).sqrt();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
        let c = loss_eval(loss, mean + sd * u, y).d1;
        m1 += w * c;
        m2 += w * c * c;
    }
    (m1, m2)
}

/// `E₁..E₄` by Gauss-Hermite quadrature on each branch.
pub fn mixture_moments(law: &MixtureLaw, loss: LossSpec, pi: f64) -> Result<MixtureMoments> {
    let rule = gauss_hermite(MIXTURE_ORDER)?;
    let (p1, p2) = branch(&rule, loss, law.mean_plus, law.var_plus, 1.0);
    let (n1, n2) = branch(&rule, loss, law.mean_minus, law.var_minus, -1.0);
    Ok(MixtureMoments {
        e1: pi * p1 + (1.0 - pi) * n1,
        e2: p1,
        e3: pi * p2 + (1.0 - pi) * n2,
        e4: p2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1Prediction {
    pub b1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub s_w: f64,
}

pub fn predict_w1(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig, alpha0: f64) -> W1Prediction {
    let c = c_loss(loss);
    let l = config.l as f64;
    let p = config.pi * config.theta * ratio(config);
    let gamma2 = schedule.eta_w * c * p;
    let gamma1 = schedule.eta_w.abs() * c * (1.0 / (alpha0 * l) + p * p).sqrt();
    W1Prediction {
        b1: c * schedule.eta_b * (2.0 * config.pi - 1.0),
        gamma1,
        gamma2,
        s_w: if gamma1 > 0.0 { gamma2 / gamma1 } else { 0.0 },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Q2Prediction {
    pub q2_norm: f64,
    pub q2_align: f64,
    pub s_q: f64,
    /// `‖q²‖ = 0`, in which case `s_q` is reported as 0.
    pub degenerate: bool,
}

/// Literal-convention prediction for `q²`.
pub fn predict_q2(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig, alpha0: f64) -> Result<Q2Prediction> {
    Ok(predict(schedule, loss, config, alpha0, Convention::Literal)?.q2())
}

/// Everything the two-step theory predicts at one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepPrediction {
    pub convention: Convention,
    pub b1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub q2_norm: f64,
    pub q2_align: f64,
    pub s_w: f64,
    pub s_q: f64,
    pub law: MixtureLaw,
    pub moments: MixtureMoments,
}

impl TwoStepPrediction {
    pub fn q2(&self) -> Q2Prediction {
        Q2Prediction {
            q2_norm: self.q2_norm,
            q2_align: self.q2_align,
            s_q: self.s_q,
            degenerate: self.q2_norm == 0.0,
        }
    }
}

/// `‖q²‖` and `⟨ξ, q²⟩` from `γ₁, γ₂` and the moments. The exact convention
/// carries a factor `π` on every `E₂`/`E₄` term.
fn q2_formulas(schedule: &StepSchedule, config: &TaskConfig, alpha0: f64, w: &W1Prediction, e: &MixtureMoments, conv: Convention) -> (f64, f64) {
    let l = config.l as f64;
    let r = config.r as f64;
    let k = config.theta * config.theta * (r - r * r / l);
    let p = match conv {
        Convention::Literal => 1.0,
        Convention::Exact => config.pi,
    };
    let (g1, g2) = (w.gamma1, w.gamma2);
    let pre = schedule.eta_q * schedule.beta / l;
    let sq = (l - 1.0) * g1 * g1 * ((l - 1.0) * e.e1 * e.e1 + e.e3 / alpha0)
        + k * (g2 * g2 * p * e.e4 / alpha0 + 2.0 * g2 * g2 * p * e.e2 * (l - 1.0) * e.e1)
        + k * k * g2 * g2 * p * p * e.e2 * e.e2;
    let norm = pre.abs() * sq.max(0.0).sqrt();
    let align = -pre * g2 * ((l - 1.0) * e.e1 + k * p * e.e2);
    (norm, align)
}

pub fn predict(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig, alpha0: f64, conv: Convention) -> Result<TwoStepPrediction> {
    schedule.validate()?;
    config.validate()?;
    if !(alpha0 > 0.0) {
        return Err(crate::error::param("alpha0 must be positive"));
    }
    let w = predict_w1(schedule, loss, config, alpha0);
    let law = mixture_law_with(schedule, loss, config, alpha0, conv);
    let moments = mixture_moments(&law, loss, config.pi)?;
    let (norm, align) = q2_formulas(schedule, config, alpha0, &w, &moments, conv);
    // Rounding can push the ratio a hair past 1 when q² is fully aligned.
    let s_q = if norm > 0.0 { (align / norm).clamp(-1.0, 1.0) } else { 0.0 };
    Ok(TwoStepPrediction {
        convention: conv,
        b1: w.b1,
        gamma1: w.gamma1,
        gamma2: w.gamma2,
        q2_norm: norm,
        q2_align: align,
        s_w: w.s_w,
        s_q,
        law,
        moments,
    })
}

/// First-order behaviour of `|s_q|` as `α₀ → ∞`: `|s_q| ≈ 1 − coeff/α₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeAlphaExpansion {
    pub coeff: f64,
    pub sign: i8,
    pub g_plus: f64,
    pub g_minus: f64,
    /// Matching coefficient for `s_w`: `s_w ≈ 1 − coeff_w/α₀`.
    pub coeff_w: f64,
}

/// The published expansion, evaluated as printed. `G₊, G₋` are loss
/// derivatives at the limiting branch means with the spread ignored.
pub fn sq_large_alpha0(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig) -> LargeAlphaExpansion {
    let c = c_loss(loss);
    let l = config.l as f64;
    let r = config.r as f64;
    let (pi, th) = (config.pi, config.theta);
    let base = c * schedule.eta_b * (2.0 * pi - 1.0);
    let gp = loss_eval(loss, base + schedule.eta_w * pi * r * r * th * th / (2.0 * l * l), 1.0).d1;
    let gm = loss_eval(loss, base, -1.0).d1;
    let k = th * th * (r - r * r / l);
    let num = schedule.eta_w.powi(2) * c * c * (l - 1.0).powi(2) / l * (pi * gp + (1.0 - pi) * gm).powi(2)
        + (l - 1.0) * (pi * gp * gp + (1.0 - pi) * gm * gm)
        + k * gp * gp;
    let den = ((l - 1.0) * pi * gp + (1.0 - pi) * gm + k * gp).powi(2);
    let cond = -((l - 1.0) + th * th * r * (1.0 - r / l)) * pi * gp - (1.0 - pi) * gm;
    LargeAlphaExpansion {
        coeff: 0.5 * num / den,
        sign: if cond >= 0.0 { 1 } else { -1 },
        g_plus: gp,
        g_minus: gm,
        coeff_w: coeff_w(config),
    }
}

fn coeff_w(config: &TaskConfig) -> f64 {
    let l = config.l as f64;
    let x = config.pi * config.theta * config.r as f64;
    l * l / (2.0 * x * x)
}

/// The expansion implied by the exact convention. Here `G₊, G₋` are the
/// branch means of `ℓ′` at `α₀ = ∞`, where the spread of `m` stays finite.
pub fn sq_large_alpha0_exact(schedule: &StepSchedule, loss: LossSpec, config: &TaskConfig) -> Result<LargeAlphaExpansion> {
    let c = c_loss(loss);
    let l = config.l as f64;
    let r = config.r as f64;
    let (pi, th) = (config.pi, config.theta);
    let p = pi * th * r / l;
    let base = c * schedule.eta_b * (2.0 * pi - 1.0);
    let var = (c * schedule.eta_w * p).powi(2) / l;
    let law = MixtureLaw {
        mean_minus: base,
        var_minus: var,
        mean_plus: base + c * schedule.eta_w * pi * th * th * (r / l).powi(2),
        var_plus: var,
    };
    let e = mixture_moments(&law, loss, pi)?;
    let k = th * th * (r - r * r / l);
    let t = (l - 1.0) * e.e1 + k * pi * e.e2;
    let num = (l - 1.0).powi(2) * e.e1 * e.e1 / (l * p * p) + (l - 1.0) * e.e3 + k * pi * e.e4;
    let g_minus = (e.e1 - pi * e.e2) / (1.0 - pi);
    let dir = -schedule.eta_q * schedule.beta * schedule.eta_w * t;
    Ok(LargeAlphaExpansion {
        coeff: 0.5 * num / (t * t),
        sign: if dir >= 0.0 { 1 } else { -1 },
        g_plus: e.e2,
        g_minus,
        coeff_w: coeff_w(config),
    })
}
