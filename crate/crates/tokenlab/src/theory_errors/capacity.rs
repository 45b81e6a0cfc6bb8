//! Separability thresholds of the three readouts.

use serde::{Deserialize, Serialize};

use super::{Model, ScalarLaw};
use crate::data_model::TaskConfig;
use crate::error::{param, Result};
use crate::numerics::{gaussian_tail_moment2, minimize_simplex, SimplexOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub model: Model,
    pub alpha_star: f64,
    /// `(s, b)` for pooled and vectorized, `(m_q, m_ξ, b)` for attention.
    pub argmax: Vec<f64>,
    /// False when the multi-start runs disagree beyond tolerance.
    pub converged: bool,
}

impl CapacityResult {
    pub const CSV_HEADER: [&'static str; 3] = ["model", "alpha_star", "argmax"];

    pub fn csv_record(&self) -> Vec<String> {
        let args: Vec<String> = self.argmax.iter().map(|v| format!("{v:.16e}")).collect();
        vec![
            serde_json::to_value(self.model)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            format!("{:.16e}", self.alpha_star),
            args.join(";"),
        ]
    }
}

/// `(1 − s²) / [π·G(b + Xs) + (1 − π)·G(−b)]` with `G` the Gaussian tail
/// second moment.
pub fn pooled_capacity_objective(x: f64, pi: f64, s: f64, b: f64) -> f64 {
    (1.0 - s * s) / (pi * gaussian_tail_moment2(b + x * s) + (1.0 - pi) * gaussian_tail_moment2(-b))
}

/// `1 / E[G(y(b + c_q m_q + c_ξ m_ξ)/c_z)]` over the scalar law.
pub fn attention_capacity_objective(law: &ScalarLaw, m_q: f64, m_xi: f64, b: f64) -> f64 {
    1.0 / law.expect(|p| gaussian_tail_moment2(p.y * (b + p.c_q * m_q + p.c_xi * m_xi) / p.c_z))
}

fn opts() -> SimplexOptions {
    SimplexOptions {
        scale: 0.5,
        tol: 1e-11,
        max_iter: 5_000,
        restarts: 2,
        seed: 0,
    }
}

/// Best of several simplex runs on `−objective`. Returns the maximiser, the
/// maximum and whether the two best runs agree.
fn multistart<F: FnMut(&[f64]) -> f64>(mut f: F, starts: &[Vec<f64>]) -> Result<(Vec<f64>, f64, bool)> {
    let mut runs = Vec::with_capacity(starts.len());
    for x0 in starts {
        let r = minimize_simplex(|x| -f(x), x0, opts())?;
        runs.push((r.argmin, -r.min));
    }
    runs.sort_by(|a, b| b.1.total_cmp(&a.1));
    let agree = runs.len() < 2 || (runs[0].1 - runs[1].1).abs() <= 1e-6 * runs[0].1.abs().max(1.0);
    let (x, v) = runs.swap_remove(0);
    Ok((x, v, agree))
}

/// Maximal sample ratio at which the training set stays separable.
/// Attention needs the scalar law of the trained query.
pub fn capacity(model: Model, config: &TaskConfig, law: Option<&ScalarLaw>) -> Result<CapacityResult> {
    config.validate()?;
    match model {
        Model::Pooled | Model::Vectorized => {
            let x = config.pooled_snr();
            let pi = config.pi;
            // s = (1 − cos u)/2 keeps s in [0, 1]
            let to_s = |u: f64| 0.5 * (1.0 - u.cos());
            let mut starts = Vec::new();
            for s0 in [0.1f64, 0.5, 0.9] {
                for b0 in [-1.0, 0.0, 1.0] {
                    starts.push(vec![(1.0 - 2.0 * s0).acos(), b0]);
                }
            }
            let (arg, best, agree) = multistart(|v| pooled_capacity_objective(x, pi, to_s(v[0]), v[1]), &starts)?;
            let scale = if model == Model::Vectorized { config.l as f64 } else { 1.0 };
            Ok(CapacityResult {
                model,
                alpha_star: scale * best,
                argmax: vec![to_s(arg[0]), arg[1]],
                converged: agree,
            })
        }
        Model::Attention => {
            let law = law.ok_or_else(|| param("attention capacity needs a scalar law"))?;
            if law.is_empty() {
                return Err(param("scalar law is empty"));
            }
            let starts = vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.5, -0.5], vec![0.0, 1.0, -1.0]];
            let (arg, best, agree) = multistart(|v| attention_capacity_objective(law, v[0], v[1], v[2]), &starts)?;
            Ok(CapacityResult {
                model,
                alpha_star: best,
                argmax: arg,
                converged: agree,
            })
        }
        Model::ApproxAttention => Err(param("no capacity formula for the approximate attention readout")),
    }
}
