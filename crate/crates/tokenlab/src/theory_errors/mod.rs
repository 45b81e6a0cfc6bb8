//! Asymptotic errors of the readout trained on fixed features.
//!
//! With the query fixed, the attention feature of a sample splits into a
//! component in `span(q, ξ)` with scalar coordinates `(c_q, c_ξ)` and an
//! isotropic remainder of scale `c_z`. The readout statistics solve a
//! low-dimensional variational problem over this scalar law. Pooled and
//! vectorized baselines get their own specialisations, and the quadratic
//! loss admits closed forms that are used both as fast paths and as oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{sample_location, softmax_into, TaskConfig};
use crate::error::{param, Result};
use crate::numerics::{gauss_hermite, normal_cdf};

mod capacity;
mod inner;
mod limits;
mod quad;
mod ridgeless;
mod vectorized;

pub use capacity::{attention_capacity_objective, capacity, pooled_capacity_objective, CapacityResult};
pub use inner::{
    equation_residuals, inner_fixed_point, inner_fixed_point_with, outer_minimize, outer_minimize_with,
    pooled_theory, ridgeless_theory, InnerOptions, InnerSolution, OuterOptions,
};
pub use limits::{finite_l_pooled_optimum, limit_optimal_error, LimitErrorResult, LimitQuery, Regime};
pub use ridgeless::{ridgeless_quadratic, RidgelessSummary};
pub use vectorized::{vectorized_theory, vectorized_theory_with, VectorizedOptions, VectorizedSolution};

/// Default Monte-Carlo size for sampled scalar laws.
pub const DEFAULT_N_MC: usize = 200_000;
/// Below this many draws a sampled law is flagged as noisy.
pub const MIN_RELIABLE_N_MC: usize = 1_000;
/// Gauss-Hermite order of the exact pooled law in `z₀`.
pub const POOLED_ORDER: usize = 64;

const CHUNK: usize = 4096;

/// Classifier family, shared by the theory and the experiment layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Attention,
    Pooled,
    Vectorized,
    ApproxAttention,
}

/// Parameters of the scalar law besides the task itself.
///
/// `gamma` is the cosine between the query and the signal, `q_norm` the
/// query norm, so that `⟨q, ξ⟩ = gamma · q_norm`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    pub gamma: f64,
    pub q_norm: f64,
    pub beta: f64,
}

/// One atom of the scalar law. `gs = ⟨g, s⟩` and `vs = ⟨v, s⟩` are kept so
/// that the test error can be evaluated on the same draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawPoint {
    pub y: f64,
    pub c_q: f64,
    pub c_xi: f64,
    pub c_z: f64,
    pub gs: f64,
    pub vs: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    /// Monte-Carlo draws with equal weights.
    Sampled,
    /// The exact `β = 0` law on a quadrature grid in `z₀`, with the query
    /// coordinate pinned to zero.
    Pooled,
}

/// Empirical joint law of `(y, c_q, c_ξ, c_z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarLaw {
    pub params: LawParams,
    pub config: TaskConfig,
    pub kind: LawKind,
    pub points: Vec<LawPoint>,
    /// Set when fewer than [`MIN_RELIABLE_N_MC`] draws were requested.
    pub low_sample_warning: bool,
}

impl ScalarLaw {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `q` and `ξ` are colinear: only one direction of the readout is free.
    pub fn degenerate(&self) -> bool {
        self.kind == LawKind::Pooled || is_colinear(self.params.gamma)
    }

    pub fn expect<F: Fn(&LawPoint) -> f64>(&self, f: F) -> f64 {
        self.points.iter().map(|p| p.weight * f(p)).sum()
    }

    pub fn positive_mass(&self) -> f64 {
        self.expect(|p| f64::from(p.y > 0.0))
    }

    /// Overlap `μ₁ = ⟨w, q̂⟩` implied by the free coordinates.
    pub(crate) fn mu1_of(&self, mu_q: f64, mu_xi: f64) -> f64 {
        match self.kind {
            LawKind::Pooled => 0.0,
            LawKind::Sampled if is_colinear(self.params.gamma) => self.params.gamma.signum() * mu_xi,
            LawKind::Sampled => mu_q,
        }
    }

    /// `μ₃`, the scale of the test-time noise, clipped at zero.
    pub fn mu3(&self, nu: f64, mu1: f64, mu2: f64) -> Result<f64> {
        let g = self.params.gamma;
        let rad = if self.degenerate() {
            if self.kind == LawKind::Pooled {
                nu * nu + mu2 * mu2
            } else {
                nu * nu
            }
        } else {
            nu * nu + (mu1 * mu1 + mu2 * mu2 - 2.0 * g * mu1 * mu2) / (1.0 - g * g) - mu1 * mu1
        };
        if rad < -1e-10 {
            return Err(crate::error::numeric(format!("negative radicand {rad} for mu3")));
        }
        Ok(rad.max(0.0).sqrt())
    }

    /// Test error of a readout with statistics `(μ₁, μ₂, μ₃, b)` averaged
    /// over the atoms of this law.
    pub fn test_error(&self, mu1: f64, mu2: f64, mu3: f64, b: f64) -> Result<Estimate> {
        if !(mu3 > 0.0) {
            return Err(param(format!("mu3 = {mu3} must be positive")));
        }
        let th = self.config.theta;
        let vals = self.points.iter().map(|p| {
            let arg = if p.y > 0.0 {
                (-b - th * p.vs * mu2 - p.gs * mu1) / (mu3 * p.c_z)
            } else {
                (b + p.gs * mu1) / (mu3 * p.c_z)
            };
            (p.weight, normal_cdf(arg))
        });
        Ok(weighted_estimate(vals, self.kind == LawKind::Sampled))
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

fn weighted_estimate<I: Iterator<Item = (f64, f64)>>(vals: I, sampled: bool) -> Estimate {
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for (w, v) in vals {
        s += w * v;
        s2 += w * v * v;
        n += 1;
    }
    let std_err = if sampled && n > 1 {
        ((s2 - s * s).max(0.0) / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Estimate { value: s, std_err }
}

pub(crate) fn is_colinear(gamma: f64) -> bool {
    gamma.abs() >= 1.0 - 1e-12
}

/// Draws `n_mc` atoms of the scalar law for a query with cosine `gamma`
/// to the signal and norm `q_norm`.
///
/// Draws are produced in fixed-size chunks, each from its own stream seeded
/// by `rng`, so the result does not depend on the worker count.
pub fn sample_scalar_law<R: Rng + ?Sized>(
    gamma: f64,
    q_norm: f64,
    beta: f64,
    config: &TaskConfig,
    n_mc: usize,
    rng: &mut R,
) -> Result<ScalarLaw> {
    config.validate()?;
    if !(gamma.abs() <= 1.0) {
        return Err(param(format!("cosine {gamma} outside [-1, 1]")));
    }
    if !(q_norm >= 0.0 && q_norm.is_finite() && beta.is_finite()) {
        return Err(param("query norm and inverse temperature must be finite, norm nonnegative"));
    }
    if n_mc == 0 {
        return Err(param("scalar law needs at least one draw"));
    }
    let chunks = n_mc.div_ceil(CHUNK);
    let seeds: Vec<u64> = (0..chunks).map(|_| rng.random()).collect();
    let w = 1.0 / n_mc as f64;
    let parts: Vec<Result<Vec<LawPoint>>> = seeds
        .par_iter()
        .enumerate()
        .map(|(c, &seed)| {
            let len = CHUNK.min(n_mc - c * CHUNK);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(len);
            let mut g = vec![0.0; config.l];
            let mut a = vec![0.0; config.l];
            let mut s = vec![0.0; config.l];
            for _ in 0..len {
                out.push(draw_point(gamma, q_norm, beta, config, w, &mut r, &mut g, &mut a, &mut s)?);
            }
            Ok(out)
        })
        .collect();
    let mut points = Vec::with_capacity(n_mc);
    for p in parts {
        points.extend(p?);
    }
    Ok(ScalarLaw {
        params: LawParams { gamma, q_norm, beta },
        config: config.clone(),
        kind: LawKind::Sampled,
        points,
        low_sample_warning: n_mc < MIN_RELIABLE_N_MC,
    })
}

#[allow(clippy::too_many_arguments)]
fn draw_point<R: Rng + ?Sized>(
    gamma: f64,
    q_norm: f64,
    beta: f64,
    config: &TaskConfig,
    weight: f64,
    rng: &mut R,
    g: &mut [f64],
    a: &mut [f64],
    s: &mut [f64],
) -> Result<LawPoint> {
    let th = config.theta;
    let positive = rng.random::<f64>() < config.pi;
    let v = if positive { Some(sample_location(config, rng)?) } else { None };
    for gi in g.iter_mut() {
        *gi = rng.sample(StandardNormal);
    }
    let z0: f64 = rng.sample(StandardNormal);
    for l in 0..g.len() {
        let sig = v.as_ref().map_or(0.0, |v| f64::from(v[l]) * gamma * th);
        a[l] = beta * q_norm * (g[l] + sig);
    }
    softmax_into(a, s);
    let gs: f64 = g.iter().zip(s.iter()).map(|(x, y)| x * y).sum();
    let vs: f64 = v
        .as_ref()
        .map_or(0.0, |v| v.iter().zip(s.iter()).map(|(&x, y)| f64::from(x) * y).sum());
    let sn = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (c_q, c_xi) = if is_colinear(gamma) {
        (0.0, gamma.signum() * gs + th * vs)
    } else {
        let k = sn * z0 / (1.0 - gamma * gamma).sqrt();
        (gs - gamma * k, th * vs + k)
    };
    Ok(LawPoint {
        y: if positive { 1.0 } else { -1.0 },
        c_q,
        c_xi,
        c_z: sn,
        gs,
        vs,
        weight,
    })
}

/// The `β = 0` law, exact up to quadrature in `z₀`. The query coordinate
/// is identically zero, which pins `μ_q = 0`.
pub fn pooled_law(config: &TaskConfig) -> Result<ScalarLaw> {
    config.validate()?;
    let rule = gauss_hermite(POOLED_ORDER)?;
    let l = config.l as f64;
    let frac = config.r as f64 / l;
    let cz = 1.0 / l.sqrt();
    let mut points = Vec::with_capacity(2 * rule.len());
    for (y, mass) in [(1.0, config.pi), (-1.0, 1.0 - config.pi)] {
        if mass == 0.0 {
            continue;
        }
        let vs = if y > 0.0 { frac } else { 0.0 };
        for (&z, &h) in rule.nodes.iter().zip(&rule.weights) {
            points.push(LawPoint {
                y,
                c_q: 0.0,
                c_xi: config.theta * vs + cz * z,
                c_z: cz,
                gs: 0.0,
                vs,
                weight: mass * h,
            });
        }
    }
    Ok(ScalarLaw {
        params: LawParams {
            gamma: 0.0,
            q_norm: 0.0,
            beta: 0.0,
        },
        config: config.clone(),
        kind: LawKind::Pooled,
        points,
        low_sample_warning: false,
    })
}

/// Test error for statistics `(μ₁, μ₂, μ₃, b)` by fresh Monte-Carlo over
/// `(g, v)`.
#[allow(clippy::too_many_arguments)]
pub fn test_error_formula<R: Rng + ?Sized>(
    mu1: f64,
    mu2: f64,
    mu3: f64,
    b: f64,
    params: LawParams,
    config: &TaskConfig,
    n_mc: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if !(mu3 > 0.0) {
        return Err(param(format!("mu3 = {mu3} must be positive")));
    }
    let law = sample_scalar_law(params.gamma, params.q_norm, params.beta, config, n_mc, rng)?;
    law.test_error(mu1, mu2, mu3, b)
}

/// Statistics and errors of the trained readout in the proportional limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySolution {
    pub mu1: f64,
    pub mu2: f64,
    pub b_hat: f64,
    pub nu: f64,
    pub chi: f64,
    pub mu3: f64,
    pub e_test: f64,
    pub e_test_se: f64,
    pub e_train: f64,
    pub alpha1: f64,
    pub lambda: f64,
    pub converged: bool,
    /// Relative residuals of the two self-consistent equations.
    pub residuals: [f64; 2],
}

impl TheorySolution {
    pub const CSV_HEADER: [&'static str; 13] = [
        "alpha1", "lambda", "mu1", "mu2", "b_hat", "nu", "chi", "mu3", "e_test", "e_test_se", "e_train",
        "converged", "max_residual",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.16e}");
        vec![
            f(self.alpha1),
            f(self.lambda),
            f(self.mu1),
            f(self.mu2),
            f(self.b_hat),
            f(self.nu),
            f(self.chi),
            f(self.mu3),
            f(self.e_test),
            f(self.e_test_se),
            f(self.e_train),
            self.converged.to_string(),
            f(self.residuals[0].max(self.residuals[1])),
        ]
    }
}

#[cfg(test)]
mod tests;
