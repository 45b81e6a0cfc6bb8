//! Margin losses, their derivatives and proximal maps.

use serde::{Deserialize, Serialize};

use crate::error::{numeric, param, Result};

/// Supported loss families. New variants must be convex in the score and
/// smooth enough for the Newton solvers.
#[non_exhaustive]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `log(1 + exp(-y z))`
    Logistic,
    /// `(z - y)² / 2`
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// The loss depends on `(z, y)` only through `y z`.
    pub margin_form: bool,
}

impl LossSpec {
    pub const LOGISTIC: LossSpec = LossSpec {
        kind: LossKind::Logistic,
        margin_form: true,
    };
    pub const QUADRATIC: LossSpec = LossSpec {
        kind: LossKind::Quadratic,
        margin_form: true,
    };

    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            margin_form: true,
        }
    }

    /// Upper bound on the second derivative.
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            LossKind::Logistic => 0.25,
            LossKind::Quadratic => 1.0,
        }
    }
}

impl From<LossKind> for LossSpec {
    fn from(kind: LossKind) -> Self {
        LossSpec::new(kind)
    }
}

/// Logistic sigmoid, stable for large `|t|`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Value and first two derivatives in `z` of `ℓ(z, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn loss_eval(spec: LossSpec, z: f64, y: f64) -> LossEval {
    match spec.kind {
        LossKind::Logistic => {
            let t = y * z;
            let value = (-t.abs()).exp().ln_1p() + (-t).max(0.0);
            let s = sigmoid(-t);
            LossEval {
                value,
                d1: -y * s,
                d2: s * (1.0 - s),
            }
        }
        LossKind::Quadratic => {
            let r = z - y;
            LossEval {
                value: 0.5 * r * r,
                d1: r,
                d2: 1.0,
            }
        }
    }
}

/// Third derivative in `z`, used by Newton solvers on the state equations.
pub fn loss_d3(spec: LossSpec, z: f64, y: f64) -> f64 {
    match spec.kind {
        LossKind::Logistic => {
            let s = sigmoid(y * z);
            // d/dz [σ(yz)(1−σ(yz))] = y σ'(yz) (1 − 2σ(yz))
            y * s * (1.0 - s) * (1.0 - 2.0 * s)
        }
        LossKind::Quadratic => 0.0,
    }
}

/// `−ℓ̃′(0)`: 1/2 for logistic, 1 for quadratic.
pub fn c_loss(spec: LossSpec) -> f64 {
    match spec.kind {
        LossKind::Logistic => 0.5,
        LossKind::Quadratic => 1.0,
    }
}

/// `argmin_z ℓ(z, y) + (x − z)² / (2γ)`.
pub fn prox(spec: LossSpec, y: f64, x: f64, gamma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(param(format!("prox step {gamma} must be finite and nonnegative")));
    }
    if gamma == 0.0 {
        return Ok(x);
    }
    match spec.kind {
        LossKind::Quadratic => Ok((x + gamma * y) / (1.0 + gamma)),
        LossKind::Logistic => prox_logistic(y, x, gamma, None),
    }
}

/// [`prox`] started from `guess`, which only affects the iteration count.
pub fn prox_from(spec: LossSpec, y: f64, x: f64, gamma: f64, guess: f64) -> Result<f64> {
    match spec.kind {
        LossKind::Logistic if gamma > 0.0 && gamma.is_finite() => prox_logistic(y, x, gamma, Some(guess)),
        _ => prox(spec, y, x, gamma),
    }
}

/// Safeguarded Newton on `g(z) = γ ℓ′(z) + z − x`, which is increasing.
/// Since `|ℓ′| < 1` the root lies in `[x − γ, x + γ]`.
fn prox_logistic(y: f64, x: f64, gamma: f64, guess: Option<f64>) -> Result<f64> {
    let g = |z: f64| {
        let s = sigmoid(-y * z);
        (z - x - gamma * y * s, 1.0 + gamma * s * (1.0 - s))
    };
    let (mut lo, mut hi) = (x - gamma, x + gamma);
    let mut z = match guess {
        Some(t) if t.is_finite() => t.clamp(lo, hi),
        // linearization at x
        _ => {
            let (g0, dg0) = g(x);
            (x - g0 / dg0).clamp(lo, hi)
        }
    };
    let mut prev_step = hi - lo;
    for _ in 0..200 {
        let (gz, dgz) = g(z);
        if gz == 0.0 {
            return Ok(z);
        }
        if gz > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let step = gz / dgz;
        let mut next = z - step;
        // bisect when Newton leaves the bracket or fails to halve the step
        if !(next > lo && next < hi) || step.abs() > 0.5 * prev_step.abs() {
            next = 0.5 * (lo + hi);
        }
        prev_step = next - z;
        if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) || hi - lo <= 1e-15 * (1.0 + z.abs()) {
            return Ok(next);
        }
        z = next;
    }
    Err(numeric(format!("logistic prox did not converge at x={x}, gamma={gamma}")))
}
