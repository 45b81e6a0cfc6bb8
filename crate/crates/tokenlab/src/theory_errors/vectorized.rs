//! Readout on the flattened `L·d` input.
//!
//! The score of a sample is `νZ + m(v) + b` with `m(v) = Σ_k v_k m_k`, where
//! `m_k = θ⟨w_k, ξ⟩` and `ν = ‖w‖` is the total norm. Expectations over the
//! informative subset `v` enumerate its support when it is small.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TheorySolution;
use crate::data_model::{sample_location, TaskConfig};
use crate::error::{numeric, param, Error, Result};
use crate::losses::{loss_eval, LossKind, LossSpec};
use super::quad::{ProxWalk, ZRule};
use crate::numerics::{fixed_point_solve, normal_cdf, FixedPointOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorizedOptions {
    pub gh_order: usize,
    /// Enumerate the subset law when it has at most this many atoms.
    pub support_limit: usize,
    /// Otherwise draw this many subsets.
    pub n_subsets: usize,
    pub seed: u64,
    pub fixed_point: FixedPointOptions,
    /// Use the square-loss linear system when it applies.
    pub closed_form: bool,
}

impl Default for VectorizedOptions {
    fn default() -> Self {
        Self {
            gh_order: 64,
            support_limit: 10_000,
            n_subsets: 100_000,
            seed: 0,
            fixed_point: FixedPointOptions {
                damping: 0.5,
                tol: 1e-11,
                max_iter: 20_000,
            },
            closed_form: true,
        }
    }
}

/// Vectorized solution. In the embedded [`TheorySolution`], `mu1` is zero,
/// `mu2` is the mean per-token overlap `⟨w_k, ξ⟩` and `mu3 = nu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorizedSolution {
    pub theory: TheorySolution,
    /// `m_k = θ⟨w_k, ξ⟩` per token.
    pub m: Vec<f64>,
}

/// Atoms `(y, v, mass)` of the label and subset law.
struct Atoms {
    items: Vec<(f64, Vec<f64>, f64)>,
}

impl Atoms {
    fn new(config: &TaskConfig, opts: &VectorizedOptions) -> Result<Self> {
        let l = config.l;
        let mut items = Vec::new();
        if config.pi < 1.0 {
            items.push((-1.0, vec![0.0; l], 1.0 - config.pi));
        }
        if config.pi > 0.0 {
            match config.location_support(opts.support_limit) {
                Some(sup) => {
                    for (v, p) in sup {
                        items.push((1.0, v.iter().map(|&x| f64::from(x)).collect(), config.pi * p));
                    }
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    let p = config.pi / opts.n_subsets as f64;
                    for _ in 0..opts.n_subsets {
                        let v = sample_location(config, &mut rng)?;
                        items.push((1.0, v.iter().map(|&x| f64::from(x)).collect(), p));
                    }
                }
            }
        }
        Ok(Self { items })
    }

    fn shift(&self, m: &[f64], i: usize) -> f64 {
        self.items[i].1.iter().zip(m).map(|(v, mk)| v * mk).sum()
    }
}

/// Solves the vectorized state equations at sample ratio `alpha = n/d`.
pub fn vectorized_theory(config: &TaskConfig, alpha: f64, lambda: f64, loss: LossSpec) -> Result<VectorizedSolution> {
    vectorized_theory_with(config, alpha, lambda, loss, &VectorizedOptions::default())
}

pub fn vectorized_theory_with(
    config: &TaskConfig,
    alpha: f64,
    lambda: f64,
    loss: LossSpec,
    opts: &VectorizedOptions,
) -> Result<VectorizedSolution> {
    config.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(param(format!("sample ratio {alpha} must be positive")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(param(format!("ridge {lambda} must be nonnegative")));
    }
    let atoms = Atoms::new(config, opts)?;
    let (m, b, nu, chi, e_loss, converged) = if loss.kind == LossKind::Quadratic && opts.closed_form {
        quadratic(config, &atoms, alpha, lambda)?
    } else {
        if !(lambda > 0.0) {
            return Err(param("the general-loss vectorized equations need a positive ridge"));
        }
        general(config, &atoms, alpha, lambda, loss, opts)?
    };
    let e_test = test_error(&atoms, &m, b, nu);
    let th = config.theta;
    let mean_overlap = if th > 0.0 {
        m.iter().sum::<f64>() / (th * m.len() as f64)
    } else {
        0.0
    };
    let residual = residual(config, &atoms, alpha, lambda, loss, &m, b, nu, chi, opts.gh_order)?;
    Ok(VectorizedSolution {
        theory: TheorySolution {
            mu1: 0.0,
            mu2: mean_overlap,
            b_hat: b,
            nu,
            chi,
            mu3: nu,
            e_test,
            e_test_se: 0.0,
            e_train: e_loss + 0.5 * lambda * nu * nu,
            alpha1: alpha,
            lambda,
            converged,
            residuals: residual,
        },
        m,
    })
}

fn test_error(atoms: &Atoms, m: &[f64], b: f64, nu: f64) -> f64 {
    atoms
        .items
        .iter()
        .enumerate()
        .map(|(i, (y, _, p))| {
            let s = if *y > 0.0 { -b - atoms.shift(m, i) } else { b };
            let v = if nu > 0.0 {
                normal_cdf(s / nu)
            } else if s > 0.0 {
                1.0
            } else if s == 0.0 {
                0.5
            } else {
                0.0
            };
            p * v
        })
        .sum()
}

type Solved = (Vec<f64>, f64, f64, f64, f64, bool);

/// Closed forms for the square loss: `χ̂ = 1/(1 + χ)` and an `(L + 1)`
/// linear system for `(m, b)`, after which `ν²` is explicit.
fn quadratic(config: &TaskConfig, atoms: &Atoms, alpha: f64, lambda: f64) -> Result<Solved> {
    let l = config.l;
    let lf = l as f64;
    let k = lf / alpha;
    let chi = if lambda > 0.0 {
        let c = lambda + 1.0 - k;
        (-c + (c * c + 4.0 * lambda * k).sqrt()) / (2.0 * lambda)
    } else if alpha > lf {
        lf / (alpha - lf)
    } else {
        return Err(numeric(format!("ridgeless square loss needs alpha > L, got {alpha}")));
    };
    let chih = 1.0 / (1.0 + chi);
    let th2 = config.theta * config.theta;
    // E[v'_k v'_j] and E[v'_k] over the joint law (zero on negatives)
    let mut mm = vec![vec![0.0; l]; l];
    let mut ev = vec![0.0; l];
    for (y, v, p) in &atoms.items {
        if *y < 0.0 {
            continue;
        }
        for a in 0..l {
            ev[a] += p * v[a];
            for c in 0..l {
                mm[a][c] += p * v[a] * v[c];
            }
        }
    }
    let pi = config.pi;
    let diag = lambda * (1.0 + chi) + 1.0;
    let sys = faer::Mat::<f64>::from_fn(l + 1, l + 1, |i, j| match (i < l, j < l) {
        (true, true) => th2 * mm[i][j] + if i == j { diag } else { 0.0 },
        (true, false) => th2 * ev[i],
        (false, true) => ev[j],
        (false, false) => 1.0,
    });
    let rhs = faer::Mat::<f64>::from_fn(l + 1, 1, |i, _| if i < l { th2 * ev[i] } else { 2.0 * pi - 1.0 });
    use faer::linalg::solvers::Solve;
    let sol = sys.partial_piv_lu().solve(&rhs);
    let m: Vec<f64> = (0..l).map(|i| sol[(i, 0)]).collect();
    let b = sol[(l, 0)];
    if m.iter().chain(std::iter::once(&b)).any(|x| !x.is_finite()) {
        return Err(numeric("singular vectorized system"));
    }
    let mut s = 0.0;
    let mut lv = vec![0.0; l];
    for (i, (y, v, p)) in atoms.items.iter().enumerate() {
        let r = atoms.shift(&m, i) + b - y;
        s += p * r * r;
        for a in 0..l {
            lv[a] += p * r * v[a] / (1.0 + chi);
        }
    }
    let sig: f64 = th2 * lv.iter().map(|x| x * x).sum::<f64>();
    let d2 = (1.0 + chi) * (1.0 + chi);
    let coef = (lambda + chih).powi(2) - k / d2;
    if !(coef > 0.0) {
        return Err(numeric("vectorized norm equation has no positive solution"));
    }
    let nu2 = (k * s / d2 + sig) / coef;
    let nu = nu2.max(0.0).sqrt();
    let e_loss = 0.5 * (nu2 + s) / d2;
    Ok((m, b, nu, chi, e_loss, true))
}

fn general(
    config: &TaskConfig,
    atoms: &Atoms,
    alpha: f64,
    lambda: f64,
    loss: LossSpec,
    opts: &VectorizedOptions,
) -> Result<Solved> {
    let l = config.l;
    let k = l as f64 / alpha;
    let th = config.theta;
    let rule = ZRule::new(opts.gh_order)?;
    let mut failure: Option<Error> = None;
    let stats = |x: &[f64]| -> Result<(f64, f64, f64, Vec<f64>, f64)> {
        let (m, b, nu, chi) = (&x[..l], x[l], x[l + 1], x[l + 2]);
        let (mut e1, mut e1sq, mut ch, mut el) = (0.0, 0.0, 0.0, 0.0);
        let mut ev = vec![0.0; l];
        let mut nodes = Vec::new();
        for (i, (y, v, p)) in atoms.items.iter().enumerate() {
            let c = atoms.shift(m, i) + b;
            rule.nodes(loss, nu, c, *y, chi, &mut nodes);
            let mut walk = ProxWalk::new(loss, *y, chi);
            for &(z, h) in &nodes {
                let t = walk.at(nu * z + c)?;
                let le = loss_eval(loss, t, *y);
                let w = p * h;
                e1 += w * le.d1;
                e1sq += w * le.d1 * le.d1;
                ch += w * le.d2 / (1.0 + chi * le.d2);
                el += w * le.value;
                if *y > 0.0 {
                    for a in 0..l {
                        ev[a] += w * le.d1 * v[a];
                    }
                }
            }
        }
        Ok((e1, e1sq, ch, ev, el))
    };
    let map = |x: &[f64]| -> Vec<f64> {
        match stats(x) {
            Ok((e1, e1sq, ch, ev, _)) => {
                let den = lambda + ch;
                let mut out: Vec<f64> = ev.iter().map(|e| -th * th * e / den).collect();
                out.push(x[l] - e1 / ch);
                let sig: f64 = th * th * ev.iter().map(|e| e * e).sum::<f64>();
                out.push(((k * e1sq + sig) / (den * den)).sqrt());
                out.push(k / den);
                out
            }
            Err(e) => {
                failure.get_or_insert(e);
                vec![f64::NAN; l + 3]
            }
        }
    };
    let mut x0 = vec![0.0; l + 3];
    x0[l] = 2.0 * config.pi - 1.0;
    x0[l + 1] = 1.0;
    x0[l + 2] = k / (lambda + loss.curvature_bound());
    let fp = fixed_point_solve(map, &x0, opts.fixed_point);
    if let Some(e) = failure {
        return Err(e);
    }
    let fp = fp?;
    let x = fp.solution;
    let el = stats(&x)?.4;
    Ok((x[..l].to_vec(), x[l], x[l + 1], x[l + 2], el, fp.converged))
}

/// Relative residuals of the `ν` and `χ` equations at a candidate solution.
#[allow(clippy::too_many_arguments)]
fn residual(
    config: &TaskConfig,
    atoms: &Atoms,
    alpha: f64,
    lambda: f64,
    loss: LossSpec,
    m: &[f64],
    b: f64,
    nu: f64,
    chi: f64,
    gh_order: usize,
) -> Result<[f64; 2]> {
    let l = config.l;
    let k = l as f64 / alpha;
    let th = config.theta;
    let rule = ZRule::new(gh_order)?;
    let (mut e1sq, mut ch) = (0.0, 0.0);
    let mut ev = vec![0.0; l];
    let mut nodes = Vec::new();
    for (i, (y, v, p)) in atoms.items.iter().enumerate() {
        let c = atoms.shift(m, i) + b;
        rule.nodes(loss, nu, c, *y, chi, &mut nodes);
        let mut walk = ProxWalk::new(loss, *y, chi);
        for &(z, h) in &nodes {
            let t = walk.at(nu * z + c)?;
            let le = loss_eval(loss, t, *y);
            e1sq += p * h * le.d1 * le.d1;
            ch += p * h * le.d2 / (1.0 + chi * le.d2);
            for a in 0..l {
                ev[a] += p * h * le.d1 * v[a];
            }
        }
    }
    let den = lambda + ch;
    let sig: f64 = th * th * ev.iter().map(|e| e * e).sum::<f64>();
    let nu2 = (k * e1sq + sig) / (den * den);
    Ok([
        (1.0 - nu2 / (nu * nu).max(f64::MIN_POSITIVE)).abs(),
        (1.0 - chi * den / k).abs(),
    ])
}
