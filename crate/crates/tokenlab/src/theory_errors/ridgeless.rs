//! Square loss at `λ → 0⁺`: the `α → ∞` residual test error and the
//! coefficient of its leading `1/α` correction,
//! `E_test(α) ≈ e_test_inf + correction_coeff / α`.

use serde::{Deserialize, Serialize};

use super::{Model, ScalarLaw};
use crate::data_model::TaskConfig;
use crate::error::{numeric, param, Result};
use crate::numerics::{normal_cdf, normal_pdf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgelessSummary {
    pub model: Model,
    pub e_test_inf: f64,
    pub correction_coeff: f64,
    /// Limiting bias.
    pub b_inf: f64,
    /// Limiting readout coordinates: `[μ₂/√L]` for pooled, `[R m, ν]` for
    /// vectorized, `[μ₁, μ₂]` for attention.
    pub overlaps_inf: Vec<f64>,
    /// Coefficient of `1/α` in the noise variance.
    pub noise_coeff: f64,
}

/// Closed forms of the ridgeless square-loss readout. `law` is required
/// for the attention model and ignored otherwise.
pub fn ridgeless_quadratic(model: Model, config: &TaskConfig, law: Option<&ScalarLaw>) -> Result<RidgelessSummary> {
    config.validate()?;
    match model {
        Model::Pooled => pooled(config),
        Model::Vectorized => vectorized(config),
        Model::Attention => attention(law.ok_or_else(|| param("attention closed forms need a scalar law"))?),
        Model::ApproxAttention => Err(param("no closed form for the approximate attention readout")),
    }
}

fn snr(config: &TaskConfig) -> Result<f64> {
    let x = config.pooled_snr();
    let pi = config.pi;
    if !(x > 0.0) || pi <= 0.0 || pi >= 1.0 {
        return Err(param("closed forms need a signal and both classes present"));
    }
    Ok(x)
}

/// `E = (1−π)Φ(A) + πΦ(B)` and `−[(1−π)φ(A)A + πφ(B)B]`.
fn two_branch(pi: f64, a: f64, b: f64) -> (f64, f64) {
    (
        (1.0 - pi) * normal_cdf(a) + pi * normal_cdf(b),
        -((1.0 - pi) * normal_pdf(a) * a + pi * normal_pdf(b) * b),
    )
}

fn pooled(config: &TaskConfig) -> Result<RidgelessSummary> {
    let x = snr(config)?;
    let pi = config.pi;
    let den = 1.0 + pi * x * x * (1.0 - pi);
    let a = 2.0 * pi * x * (1.0 - pi) / den;
    let b = (2.0 * pi - 1.0 - pi * x * x * (1.0 - pi)) / den;
    let q = 1.0 + b * b - 2.0 * b * (2.0 * pi - 1.0) + a * a * (1.0 + pi * x * x) - 2.0 * pi * a * x * (1.0 - b);
    let (e, slope) = two_branch(pi, b / a, (-b - x * a) / a);
    Ok(RidgelessSummary {
        model: Model::Pooled,
        e_test_inf: e,
        correction_coeff: slope * q / (2.0 * a * a),
        b_inf: b,
        overlaps_inf: vec![a],
        noise_coeff: q,
    })
}

fn vectorized(config: &TaskConfig) -> Result<RidgelessSummary> {
    let x = snr(config)?;
    let pi = config.pi;
    let l = config.l as f64;
    let px2 = pi * x * x;
    let b = 1.0 + (2.0 * pi - 2.0) * (1.0 + px2) / (1.0 + pi * (1.0 - pi) * x * x);
    let rm = px2 * (1.0 - b) / (1.0 + px2);
    let nu = pi * x * (1.0 - b) / (1.0 + px2);
    // ν² = ν∞² + χ·K with χ = L/(α − L)
    let k = (1.0 + px2 - pi * px2 * (1.0 - b) * (1.0 - b)) / (1.0 + px2) - 2.0 * (2.0 * pi - 1.0) * b + b * b;
    let (e, slope) = two_branch(pi, b / nu, (-b - rm) / nu);
    Ok(RidgelessSummary {
        model: Model::Vectorized,
        e_test_inf: e,
        correction_coeff: l * slope * k / (2.0 * nu * nu),
        b_inf: b,
        overlaps_inf: vec![rm, nu],
        noise_coeff: l * k,
    })
}

/// Solves a 3×3 system by Cramer's rule; `None` when singular.
fn solve3(a: &[[f64; 3]; 3], r: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).powi(3);
    if !(d.abs() > 1e-12 * scale) {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = *a;
        for i in 0..3 {
            m[i][c] = r[i];
        }
        *o = det(&m) / d;
    }
    Some(out)
}

fn attention(law: &ScalarLaw) -> Result<RidgelessSummary> {
    if law.is_empty() {
        return Err(param("scalar law is empty"));
    }
    let g = law.params.gamma;
    let th = law.config.theta;
    let feats = |p: &super::LawPoint| [p.c_q, p.c_xi, 1.0];
    let (mut i_inf, mut di) = ([[0.0; 3]; 3], [[0.0; 3]; 3]);
    let (mut j_inf, mut dj) = ([0.0; 3], [0.0; 3]);
    let mut ec2 = 0.0;
    for p in &law.points {
        let c = feats(p);
        let c2 = p.c_z * p.c_z;
        ec2 += p.weight * c2;
        for i in 0..3 {
            j_inf[i] += p.weight * p.y * c[i];
            dj[i] -= p.weight * p.y * c[i] * c2;
            for j in 0..3 {
                i_inf[i][j] += p.weight * c[i] * c[j];
                di[i][j] += p.weight * c[i] * c[j] * c2;
            }
        }
    }
    let mu = solve3(&i_inf, &j_inf).ok_or_else(|| numeric("singular population second moment: degenerate law"))?;
    let mut rhs = [0.0; 3];
    for i in 0..3 {
        rhs[i] = dj[i] / ec2 + (0..3).map(|j| di[i][j] / ec2 * mu[j]).sum::<f64>();
    }
    let dmu = solve3(&i_inf, &rhs).ok_or_else(|| numeric("singular population second moment: degenerate law"))?;
    let v_tilde = law.expect(|p| {
        let e = mu[0] * p.c_q + mu[1] * p.c_xi + mu[2];
        p.c_z * p.c_z * (p.y - e) * (p.y - e)
    }) / (ec2 * ec2);
    let (m1, m2, b) = (mu[0], mu[1], mu[2]);
    let (d1, d2, db) = (dmu[0], dmu[1], dmu[2]);
    let one_g = 1.0 - g * g;
    let mu3 = ((m1 * m1 + m2 * m2 - 2.0 * g * m1 * m2) / one_g - m1 * m1).max(0.0).sqrt();
    if !(mu3 > 0.0) {
        return Err(numeric("vanishing limiting noise scale"));
    }
    let dmu3 = (0.5 * v_tilde + (m1 * d1 + m2 * d2 - g * (m1 * d2 + m2 * d1)) / one_g - m1 * d1) / mu3;
    let (mut e, mut corr) = (0.0, 0.0);
    for p in &law.points {
        let s = mu3 * p.c_z;
        let (num, dnum) = if p.y > 0.0 {
            (-b - th * p.vs * m2 - p.gs * m1, -db - th * p.vs * d2 - p.gs * d1)
        } else {
            (b + p.gs * m1, db + p.gs * d1)
        };
        let arg = num / s;
        let darg = dnum / s - arg * dmu3 / mu3;
        e += p.weight * normal_cdf(arg);
        corr += p.weight * normal_pdf(arg) * darg;
    }
    Ok(RidgelessSummary {
        model: Model::Attention,
        e_test_inf: e,
        correction_coeff: corr,
        b_inf: b,
        overlaps_inf: vec![m1, m2],
        noise_coeff: v_tilde,
    })
}
