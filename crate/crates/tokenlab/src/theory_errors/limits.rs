//! Optimal test errors as the sequence length grows, indexed by
//! `SNR = lim θR/√L`.

use serde::{Deserialize, Serialize};

use super::Model;
use crate::data_model::TaskConfig;
use crate::error::{param, Result};
use crate::numerics::{minimize_scalar, normal_cdf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SnrZero,
    SnrFinite,
    SnrInfinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitQuery {
    pub model: Model,
    /// May be `f64::INFINITY`.
    pub snr: f64,
    pub pi: f64,
    /// `liminf θ/√(2 log L)`, used by the attention readout only.
    pub attention_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitErrorResult {
    pub model: Model,
    pub regime: Regime,
    /// `None` where only a qualitative statement is available.
    pub value: Option<f64>,
    /// The limit is known to be bounded away from zero.
    pub strictly_positive: bool,
}

pub fn limit_optimal_error(q: &LimitQuery) -> Result<LimitErrorResult> {
    if !(q.snr >= 0.0) {
        return Err(param(format!("SNR {} must be nonnegative", q.snr)));
    }
    if !(0.0..=1.0).contains(&q.pi) {
        return Err(param(format!("class prior {} outside [0, 1]", q.pi)));
    }
    let regime = if q.snr == 0.0 {
        Regime::SnrZero
    } else if q.snr.is_infinite() {
        Regime::SnrInfinite
    } else {
        Regime::SnrFinite
    };
    let trivial = q.pi.min(1.0 - q.pi);
    let (value, strictly_positive) = match (q.model, regime) {
        (Model::Attention, _) => match q.attention_ratio {
            Some(r) if r > 1.0 => (Some(0.0), false),
            _ => (None, false),
        },
        (_, Regime::SnrZero) => (Some(trivial), trivial > 0.0),
        (_, Regime::SnrInfinite) => (Some(0.0), false),
        (Model::Pooled, Regime::SnrFinite) => {
            let v = pooled_limit(q.snr, q.pi);
            (Some(v), v > 0.0)
        }
        (Model::Vectorized, Regime::SnrFinite) => (None, trivial > 0.0),
        (Model::ApproxAttention, Regime::SnrFinite) => (None, false),
    };
    Ok(LimitErrorResult {
        model: q.model,
        regime,
        value,
        strictly_positive,
    })
}

/// `(1−π)Φ(b*) + πΦ(−b* − SNR)` with `b* = −SNR/2 − log(1/π − 1)/SNR`.
fn pooled_limit(snr: f64, pi: f64) -> f64 {
    if pi == 0.0 || pi == 1.0 {
        return 0.0;
    }
    let b = -snr / 2.0 - (1.0 / pi - 1.0).ln() / snr;
    (1.0 - pi) * normal_cdf(b) + pi * normal_cdf(-b - snr)
}

/// Best pooled test error at finite `L`: the minimum over `b` of
/// `(1−π)Φ(−b) + πΦ(b − θR/√L)`. Returns `(b, error)`.
pub fn finite_l_pooled_optimum(config: &TaskConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let x = config.pooled_snr();
    let pi = config.pi;
    let f = |b: f64| (1.0 - pi) * normal_cdf(-b) + pi * normal_cdf(b - x);
    let span = 12.0 + x;
    minimize_scalar(f, (-span, span), 1e-12)
}
