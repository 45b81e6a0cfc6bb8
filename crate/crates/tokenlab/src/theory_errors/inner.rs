//! The `(ν, χ)` state equations and the outer problem over `(μ_q, μ_ξ, b)`.
//!
//! For a general loss the equations are solved in the equivalent form
//! `ν² = α₁χ² E[c_z² ℓ′(t)²]`, `1 = α₁χ(λ + E[c_z² ℓ″/(1 + c_z²χ ℓ″)])` by
//! Newton steps in `(ln ν, ln χ)`, where `t` is the proximal point of the
//! shifted score. The quadratic loss has `χ` independent of the readout and
//! an outer problem that is a small linear system.

use std::cell::Cell;

use faer::linalg::solvers::Solve;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quad::{ProxWalk, ZRule};
use super::{LawPoint, ScalarLaw, TheorySolution, CHUNK};
use crate::data_model::TaskConfig;
use crate::error::{numeric, param, Result};
use crate::losses::{loss_d3, loss_eval, LossKind, LossSpec};
use crate::numerics::{
    extrapolate_to_zero, find_root, minimize_simplex, normal_quantile, SimplexOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Gauss-Hermite order for the `Z` integral.
    pub gh_order: usize,
    /// Target on the relative residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Use the square-loss closed forms when they apply.
    pub closed_form: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            gh_order: 64,
            tol: 1e-12,
            max_iter: 100,
            closed_form: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub nu: f64,
    pub chi: f64,
    /// `E[ℓ(z* + ε, y)] + λν²/2`.
    pub phi: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterOptions {
    pub inner: InnerOptions,
    pub simplex: SimplexOptions,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            inner: InnerOptions::default(),
            simplex: SimplexOptions {
                scale: 0.5,
                tol: 1e-9,
                max_iter: 2_000,
                restarts: 2,
                seed: 0,
            },
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    f1: f64,
    chih: f64,
    loss: f64,
    dnu_f1: f64,
    dchi_f1: f64,
    dnu_chih: f64,
    dchi_chih: f64,
    disp: f64,
    dnu_disp: f64,
    dchi_disp: f64,
}

impl Moments {
    fn add(mut self, o: Moments) -> Moments {
        self.f1 += o.f1;
        self.chih += o.chih;
        self.loss += o.loss;
        self.dnu_f1 += o.dnu_f1;
        self.dchi_f1 += o.dchi_f1;
        self.dnu_chih += o.dnu_chih;
        self.dchi_chih += o.dchi_chih;
        self.disp += o.disp;
        self.dnu_disp += o.dnu_disp;
        self.dchi_disp += o.dchi_disp;
        self
    }
}

struct Kernel<'a> {
    points: &'a [LawPoint],
    eps: Vec<f64>,
    rule: ZRule,
    loss: LossSpec,
    alpha1: f64,
    lambda: f64,
}

impl<'a> Kernel<'a> {
    fn new(law: &'a ScalarLaw, loss: LossSpec, alpha1: f64, lambda: f64, gh_order: usize) -> Result<Self> {
        if law.is_empty() {
            return Err(param("scalar law is empty"));
        }
        if !(alpha1 > 0.0 && alpha1.is_finite()) {
            return Err(param(format!("sample ratio {alpha1} must be positive")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(param(format!("ridge {lambda} must be nonnegative")));
        }
        Ok(Self {
            points: &law.points,
            eps: vec![0.0; law.len()],
            rule: ZRule::new(gh_order)?,
            loss,
            alpha1,
            lambda,
        })
    }

    fn set_shift(&mut self, mu_q: f64, mu_xi: f64, b: f64) {
        for (e, p) in self.eps.iter_mut().zip(self.points) {
            *e = p.c_q * mu_q + p.c_xi * mu_xi + b;
        }
    }

    fn moments(&self, nu: f64, chi: f64) -> Result<Moments> {
        let parts: Vec<Result<Moments>> = self
            .points
            .par_chunks(CHUNK)
            .zip(self.eps.par_chunks(CHUNK))
            .map(|(pts, eps)| {
                let mut m = Moments::default();
                let mut nodes = Vec::new();
                for (p, &e) in pts.iter().zip(eps) {
                    let c2 = p.c_z * p.c_z;
                    let tau = c2 * chi;
                    self.rule.nodes(self.loss, p.c_z * nu, e, p.y, tau, &mut nodes);
                    let mut walk = ProxWalk::new(self.loss, p.y, tau);
                    for &(z, h) in &nodes {
                        let t = walk.at(p.c_z * nu * z + e)?;
                        let le = loss_eval(self.loss, t, p.y);
                        let d3 = loss_d3(self.loss, t, p.y);
                        let den = 1.0 + tau * le.d2;
                        let w = p.weight * h;
                        let dt_nu = p.c_z * z / den;
                        let dt_chi = -c2 * le.d1 / den;
                        m.f1 += w * c2 * le.d1 * le.d1;
                        m.chih += w * c2 * le.d2 / den;
                        m.loss += w * le.value;
                        m.dnu_f1 += w * 2.0 * c2 * le.d1 * le.d2 * dt_nu;
                        m.dchi_f1 += w * 2.0 * c2 * le.d1 * le.d2 * dt_chi;
                        m.dnu_chih += w * c2 * d3 * dt_nu / (den * den);
                        m.dchi_chih += w * c2 * (d3 * dt_chi - le.d2 * le.d2 * c2) / (den * den);
                        // z*(z* − c_zνZ)/c_z² = −χ(t − ε)ℓ′(t)
                        let g = le.d1 + (t - e) * le.d2;
                        m.disp -= w * chi * (t - e) * le.d1;
                        m.dnu_disp -= w * chi * dt_nu * g;
                        m.dchi_disp -= w * ((t - e) * le.d1 + chi * dt_chi * g);
                    }
                }
                Ok(m)
            })
            .collect();
        let mut total = Moments::default();
        for p in parts {
            total = total.add(p?);
        }
        Ok(total)
    }

    /// Residuals in the replica form or, with `displayed`, in the form
    /// `λχν² = E[z*(z* − c_zνZ)/c_z²]` used by [`equation_residuals`].
    fn residuals(&self, nu: f64, chi: f64, m: &Moments, displayed: bool) -> [f64; 2] {
        let r0 = if displayed {
            1.0 - m.disp / (self.lambda * chi * nu * nu)
        } else {
            1.0 - self.alpha1 * chi * chi * m.f1 / (nu * nu)
        };
        [r0, 1.0 - self.alpha1 * chi * (self.lambda + m.chih)]
    }

    /// Jacobian of [`Self::residuals`] in `(ln ν, ln χ)`.
    fn jacobian(&self, nu: f64, chi: f64, m: &Moments, displayed: bool) -> [f64; 4] {
        let a1 = self.alpha1;
        let l = self.lambda;
        let (j11, j12) = if displayed {
            let t = l * chi * nu * nu;
            (-(nu * m.dnu_disp - 2.0 * m.disp) / t, -(chi * m.dchi_disp - m.disp) / t)
        } else {
            (
                -a1 * chi * chi * (nu * m.dnu_f1 - 2.0 * m.f1) / (nu * nu),
                -a1 * (2.0 * chi * chi * m.f1 + chi * chi * chi * m.dchi_f1) / (nu * nu),
            )
        };
        let j21 = -a1 * chi * nu * m.dnu_chih;
        let j22 = -a1 * chi * (l + m.chih) - a1 * chi * chi * m.dchi_chih;
        [j11, j12, j21, j22]
    }

    fn initial(&self) -> Result<(f64, f64)> {
        let k = self.loss.curvature_bound();
        let ec2: f64 = self.points.iter().map(|p| p.weight * p.c_z * p.c_z).sum();
        let chi = 1.0 / (self.alpha1 * (self.lambda + k * ec2).max(1e-12));
        let m = self.moments(1.0, chi)?;
        let nu = (self.alpha1 * chi * chi * m.f1).sqrt().max(1e-3);
        Ok((nu, chi))
    }

    /// `polish` refines the result on the displayed form of the equations.
    fn solve(&self, warm: Option<(f64, f64)>, opts: &InnerOptions, polish: bool) -> Result<InnerSolution> {
        let start = match warm {
            Some(w) if w.0 > 0.0 && w.1 > 0.0 && w.0.is_finite() && w.1.is_finite() => w,
            _ => self.initial()?,
        };
        let (mut nu, mut chi, mut m, mut it, mut ok) = self.newton(start, false, opts)?;
        if !ok && warm.is_some() {
            // A stale warm start can stall the line search.
            (nu, chi, m, it, ok) = self.newton(self.initial()?, false, opts)?;
        }
        let sol = if ok {
            self.finish(nu, chi, &m, true, it)
        } else {
            self.nested_fallback(nu, chi, opts)?
        };
        // Both forms agree up to quadrature error; finish on the displayed
        // one so that the solution re-satisfies it to solver tolerance.
        if polish && sol.converged && self.lambda > 0.0 {
            let (pn, pc, pm, pit, pok) = self.newton((sol.nu, sol.chi), true, opts)?;
            if pok {
                return Ok(self.finish(pn, pc, &pm, true, sol.iterations + pit));
            }
        }
        Ok(sol)
    }

    /// Damped Newton in `(ln ν, ln χ)` with steps clipped to unit length.
    fn newton(
        &self,
        start: (f64, f64),
        displayed: bool,
        opts: &InnerOptions,
    ) -> Result<(f64, f64, Moments, usize, bool)> {
        let (mut nu, mut chi) = start;
        let mut m = self.moments(nu, chi)?;
        let mut r = self.residuals(nu, chi, &m, displayed);
        for it in 0..opts.max_iter {
            let norm = r[0].abs().max(r[1].abs());
            if norm <= opts.tol {
                return Ok((nu, chi, m, it, true));
            }
            let [j11, j12, j21, j22] = self.jacobian(nu, chi, &m, displayed);
            let det = j11 * j22 - j12 * j21;
            if !(det.is_finite() && det.abs() > 1e-300) {
                break;
            }
            let mut du = (j22 * r[0] - j12 * r[1]) / det;
            let mut dv = (-j21 * r[0] + j11 * r[1]) / det;
            // Shrink the whole step so that the direction is kept.
            let len = du.abs().max(dv.abs());
            if len > 1.0 {
                du /= len;
                dv /= len;
            }
            let mut accepted = false;
            for _ in 0..30 {
                let (nn, cn) = (nu * (-du).exp(), chi * (-dv).exp());
                let mn = self.moments(nn, cn)?;
                let rn = self.residuals(nn, cn, &mn, displayed);
                if rn[0].hypot(rn[1]) < r[0].hypot(r[1]) || !norm.is_finite() {
                    nu = nn;
                    chi = cn;
                    m = mn;
                    r = rn;
                    accepted = true;
                    break;
                }
                du *= 0.5;
                dv *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let ok = r[0].abs().max(r[1].abs()) <= opts.tol;
        Ok((nu, chi, m, opts.max_iter, ok))
    }

    /// Nested bracketed solve for when Newton stalls on a nearly singular
    /// Jacobian. For fixed `ν` the second equation changes sign in `χ`;
    /// along that curve the first one changes sign in `ν`.
    fn nested_fallback(&self, nu: f64, chi: f64, opts: &InnerOptions) -> Result<InnerSolution> {
        let failure: Cell<Option<crate::Error>> = Cell::new(None);
        let fail = |e| {
            let prev = failure.take();
            failure.set(Some(prev.unwrap_or(e)));
            f64::NAN
        };
        let r2 = |nu: f64, s: f64| match self.moments(nu, s.exp()) {
            Ok(m) => self.residuals(nu, s.exp(), &m, false)[1],
            Err(e) => fail(e),
        };
        let last_chi = Cell::new(chi.ln());
        let chi_of = |nu: f64| -> f64 {
            let f = |s: f64| r2(nu, s);
            match expand_bracket(f, last_chi.get(), 1.0).and_then(|(lo, hi)| find_root(f, lo, hi, 1e-14)) {
                Ok(s) => {
                    last_chi.set(s);
                    s.exp()
                }
                Err(e) => fail(e),
            }
        };
        let r1 = |t: f64| {
            let nu = t.exp();
            let chi = chi_of(nu);
            match self.moments(nu, chi) {
                Ok(m) => self.residuals(nu, chi, &m, false)[0],
                Err(e) => fail(e),
            }
        };
        let t = expand_bracket(|t| -r1(t), nu.ln(), 1.0).and_then(|(lo, hi)| find_root(r1, lo, hi, 1e-14));
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let nu = t?.exp();
        let chi = chi_of(nu);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let (pn, pc, pm, pit, pok) = self.newton((nu, chi), false, opts)?;
        if pok {
            return Ok(self.finish(pn, pc, &pm, true, pit));
        }
        let m = self.moments(nu, chi)?;
        let r = self.residuals(nu, chi, &m, false);
        let ok = r[0].abs().max(r[1].abs()) <= opts.tol.max(1e-9);
        Ok(self.finish(nu, chi, &m, ok, pit))
    }

    fn finish(&self, nu: f64, chi: f64, m: &Moments, converged: bool, iterations: usize) -> InnerSolution {
        InnerSolution {
            nu,
            chi,
            phi: m.loss + 0.5 * self.lambda * nu * nu,
            converged,
            iterations,
        }
    }
}

/// Solves the quadratic `χ` equation `1/α₁ = E[c_z²χ/(1 + c_z²χ)] + λχ`.
fn quadratic_chi(points: &[LawPoint], alpha1: f64, lambda: f64) -> Result<f64> {
    let h = |lc: f64| {
        let chi = lc.exp();
        let s: f64 = points
            .iter()
            .map(|p| {
                let t = p.c_z * p.c_z * chi;
                p.weight * t / (1.0 + t)
            })
            .sum();
        1.0 / alpha1 - s - lambda * chi
    };
    let (lo, hi) = (-80.0, 80.0);
    if h(hi) > 0.0 {
        return Err(numeric(format!(
            "no finite chi at ratio {alpha1} and ridge {lambda}: below the interpolation threshold"
        )));
    }
    Ok(find_root(h, lo, hi, 1e-15)?.exp())
}

/// Closed forms for the quadratic loss at a fixed shift.
struct QuadInner {
    chi: f64,
    nu: f64,
    phi: f64,
}

fn quadratic_inner(points: &[LawPoint], eps: &[f64], chi: f64, lambda: f64) -> QuadInner {
    let (mut a, mut b, mut phi) = (0.0, 0.0, 0.0);
    for (p, &e) in points.iter().zip(eps) {
        let c2 = p.c_z * p.c_z;
        let om = 1.0 / (1.0 + c2 * chi);
        let r2 = (p.y - e) * (p.y - e);
        a += p.weight * c2 * om * om * r2;
        b += p.weight * c2 * om * om;
        phi += p.weight * 0.5 * om * r2;
    }
    let nu2 = if lambda + b > 0.0 { chi * a / (lambda + b) } else { 0.0 };
    QuadInner {
        chi,
        nu: nu2.max(0.0).sqrt(),
        phi,
    }
}

/// Solves the state equations at a fixed `(μ_q, μ_ξ, b)`.
pub fn inner_fixed_point(
    mu_q: f64,
    mu_xi: f64,
    b: f64,
    law: &ScalarLaw,
    alpha1: f64,
    lambda: f64,
    loss: LossSpec,
) -> Result<InnerSolution> {
    inner_fixed_point_with(mu_q, mu_xi, b, law, alpha1, lambda, loss, &InnerOptions::default(), None)
}

/// [`inner_fixed_point`] with explicit options and an optional `(ν, χ)`
/// warm start.
#[allow(clippy::too_many_arguments)]
pub fn inner_fixed_point_with(
    mu_q: f64,
    mu_xi: f64,
    b: f64,
    law: &ScalarLaw,
    alpha1: f64,
    lambda: f64,
    loss: LossSpec,
    opts: &InnerOptions,
    warm: Option<(f64, f64)>,
) -> Result<InnerSolution> {
    if loss.kind == LossKind::Quadratic && opts.closed_form {
        if law.is_empty() {
            return Err(param("scalar law is empty"));
        }
        let eps: Vec<f64> = law.points.iter().map(|p| p.c_q * mu_q + p.c_xi * mu_xi + b).collect();
        let chi = quadratic_chi(&law.points, alpha1, lambda)?;
        let q = quadratic_inner(&law.points, &eps, chi, lambda);
        return Ok(InnerSolution {
            nu: q.nu,
            chi: q.chi,
            phi: q.phi,
            converged: true,
            iterations: 0,
        });
    }
    if !(lambda > 0.0) {
        return Err(param("the general-loss state equations need a positive ridge"));
    }
    let mut k = Kernel::new(law, loss, alpha1, lambda, opts.gh_order)?;
    k.set_shift(mu_q, mu_xi, b);
    k.solve(warm, opts, true)
}

/// Relative residuals of the two displayed state equations,
/// `λχν² = E[z*(z* − c_zνZ)/c_z²]` and `1/(α₁χ) = E[ℓ″c_z²/(1 + ℓ″c_z²χ)] + λ`,
/// evaluated by direct quadrature.
#[allow(clippy::too_many_arguments)]
pub fn equation_residuals(
    law: &ScalarLaw,
    mu_q: f64,
    mu_xi: f64,
    b: f64,
    alpha1: f64,
    lambda: f64,
    loss: LossSpec,
    nu: f64,
    chi: f64,
    gh_order: usize,
) -> Result<[f64; 2]> {
    let rule = ZRule::new(gh_order)?;
    let (mut lhs1, mut scale1, mut e2) = (0.0, 0.0, 0.0);
    let mut nodes = Vec::new();
    for p in &law.points {
        let e = p.c_q * mu_q + p.c_xi * mu_xi + b;
        let c2 = p.c_z * p.c_z;
        let tau = c2 * chi;
        rule.nodes(loss, p.c_z * nu, e, p.y, tau, &mut nodes);
        let mut walk = ProxWalk::new(loss, p.y, tau);
        for &(z, h) in &nodes {
            let x = p.c_z * nu * z;
            let zs = walk.at(x + e)? - e;
            let d2 = loss_eval(loss, zs + e, p.y).d2;
            let w = p.weight * h;
            lhs1 += w * zs * (zs - x) / c2;
            scale1 += w * zs * zs / c2;
            e2 += w * d2 * c2 / (1.0 + d2 * tau);
        }
    }
    let target = lambda * chi * nu * nu;
    let r1 = if lambda > 0.0 {
        (target - lhs1).abs() / target.max(f64::MIN_POSITIVE)
    } else {
        lhs1.abs() / scale1.max(f64::MIN_POSITIVE)
    };
    let r2 = (1.0 - alpha1 * chi * (e2 + lambda)).abs();
    Ok([r1, r2])
}

/// Coordinates left free by the law: both `(μ_q, μ_ξ)`, or `μ_ξ` alone.
fn free_dim(law: &ScalarLaw) -> usize {
    if law.degenerate() {
        1
    } else {
        2
    }
}

fn unpack(law: &ScalarLaw, x: &[f64]) -> (f64, f64, f64) {
    if free_dim(law) == 1 {
        (0.0, x[0], x[1])
    } else {
        (x[0], x[1], x[2])
    }
}

/// `(λ/2) μᵀ K⁻¹ μ` with `K = [[1, γ], [γ, 1]]`, or `(λ/2) μ_ξ²` when
/// only one direction is free.
fn penalty(law: &ScalarLaw, lambda: f64, mu_q: f64, mu_xi: f64) -> f64 {
    if free_dim(law) == 1 {
        return 0.5 * lambda * mu_xi * mu_xi;
    }
    let g = law.params.gamma;
    0.5 * lambda * (mu_q * mu_q + mu_xi * mu_xi - 2.0 * g * mu_q * mu_xi) / (1.0 - g * g)
}

/// Minimises `φ + (λ/2) μᵀK⁻¹μ` over `(μ_q, μ_ξ, b)` and derives the
/// test and training errors.
pub fn outer_minimize(law: &ScalarLaw, alpha1: f64, lambda: f64, loss: LossSpec) -> Result<TheorySolution> {
    outer_minimize_with(law, alpha1, lambda, loss, &OuterOptions::default())
}

pub fn outer_minimize_with(
    law: &ScalarLaw,
    alpha1: f64,
    lambda: f64,
    loss: LossSpec,
    opts: &OuterOptions,
) -> Result<TheorySolution> {
    let (x, inner) = if loss.kind == LossKind::Quadratic && opts.inner.closed_form {
        quadratic_outer(law, alpha1, lambda)?
    } else {
        general_outer(law, alpha1, lambda, loss, opts)?
    };
    let (mu_q, mu_xi, b) = unpack(law, &x);
    let residuals = equation_residuals(law, mu_q, mu_xi, b, alpha1, lambda, loss, inner.nu, inner.chi, opts.inner.gh_order)?;
    let mu1 = law.mu1_of(mu_q, mu_xi);
    let mu2 = mu_xi;
    let mu3 = law.mu3(inner.nu, mu1, mu2)?;
    let te = if mu3 > 0.0 {
        law.test_error(mu1, mu2, mu3, b)?
    } else {
        deterministic_test_error(law, mu1, mu2, b)
    };
    Ok(TheorySolution {
        mu1,
        mu2,
        b_hat: b,
        nu: inner.nu,
        chi: inner.chi,
        mu3,
        e_test: te.value,
        e_test_se: te.std_err,
        e_train: inner.phi + penalty(law, lambda, mu_q, mu_xi),
        alpha1,
        lambda,
        converged: inner.converged,
        residuals,
    })
}

/// Limit of the test error as `μ₃ → 0`: each atom is classified without noise.
fn deterministic_test_error(law: &ScalarLaw, mu1: f64, mu2: f64, b: f64) -> super::Estimate {
    let th = law.config.theta;
    let v = law.expect(|p| {
        let s = if p.y > 0.0 {
            -b - th * p.vs * mu2 - p.gs * mu1
        } else {
            b + p.gs * mu1
        };
        if s > 0.0 {
            1.0
        } else if s == 0.0 {
            0.5
        } else {
            0.0
        }
    });
    super::Estimate { value: v, std_err: 0.0 }
}

fn quadratic_outer(law: &ScalarLaw, alpha1: f64, lambda: f64) -> Result<(Vec<f64>, InnerSolution)> {
    if law.is_empty() {
        return Err(param("scalar law is empty"));
    }
    let chi = quadratic_chi(&law.points, alpha1, lambda)?;
    let n = free_dim(law) + 1;
    let feats = |p: &LawPoint| -> [f64; 3] {
        if n == 2 {
            [p.c_xi, 1.0, 0.0]
        } else {
            [p.c_q, p.c_xi, 1.0]
        }
    };
    let mut a = Mat::<f64>::zeros(n, n);
    let mut rhs = Mat::<f64>::zeros(n, 1);
    for p in &law.points {
        let om = p.weight / (1.0 + p.c_z * p.c_z * chi);
        let c = feats(p);
        for i in 0..n {
            rhs[(i, 0)] += om * p.y * c[i];
            for j in 0..n {
                a[(i, j)] += om * c[i] * c[j];
            }
        }
    }
    if n == 2 {
        a[(0, 0)] += lambda;
    } else {
        let g = law.params.gamma;
        let k = lambda / (1.0 - g * g);
        a[(0, 0)] += k;
        a[(1, 1)] += k;
        a[(0, 1)] -= k * g;
        a[(1, 0)] -= k * g;
    }
    let sol = a.partial_piv_lu().solve(&rhs);
    let x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(numeric("singular normal equations for the scalar law"));
    }
    let (mu_q, mu_xi, b) = unpack(law, &x);
    let eps: Vec<f64> = law.points.iter().map(|p| p.c_q * mu_q + p.c_xi * mu_xi + b).collect();
    let q = quadratic_inner(&law.points, &eps, chi, lambda);
    Ok((
        x,
        InnerSolution {
            nu: q.nu,
            chi: q.chi,
            phi: q.phi,
            converged: true,
            iterations: 0,
        },
    ))
}

fn general_outer(
    law: &ScalarLaw,
    alpha1: f64,
    lambda: f64,
    loss: LossSpec,
    opts: &OuterOptions,
) -> Result<(Vec<f64>, InnerSolution)> {
    if !(lambda > 0.0) {
        return Err(param("the general-loss outer problem needs a positive ridge"));
    }
    let mut kernel = Kernel::new(law, loss, alpha1, lambda, opts.inner.gh_order)?;
    let pi = law.positive_mass().clamp(1e-6, 1.0 - 1e-6);
    let b0 = normal_quantile(pi);
    let x0 = if free_dim(law) == 1 { vec![0.0, b0] } else { vec![0.0, 0.0, b0] };
    let warm: Cell<Option<(f64, f64)>> = Cell::new(None);
    let kref = &mut kernel;
    let res = {
        let mut f = |x: &[f64]| -> f64 {
            let (mu_q, mu_xi, b) = unpack(law, x);
            kref.set_shift(mu_q, mu_xi, b);
            match kref.solve(warm.get(), &opts.inner, false) {
                Ok(s) => {
                    warm.set(Some((s.nu, s.chi)));
                    s.phi + penalty(law, lambda, mu_q, mu_xi)
                }
                Err(_) => 1e100,
            }
        };
        minimize_simplex(&mut f, &x0, opts.simplex)?
    };
    let (mu_q, mu_xi, b) = unpack(law, &res.argmin);
    kernel.set_shift(mu_q, mu_xi, b);
    let inner = kernel.solve(warm.get(), &opts.inner, true)?;
    Ok((res.argmin, inner))
}

/// `β = 0` readout on the exact pooled law.
pub fn pooled_theory(config: &TaskConfig, alpha1: f64, lambda: f64, loss: LossSpec) -> Result<TheorySolution> {
    let law = super::pooled_law(config)?;
    outer_minimize(&law, alpha1, lambda, loss)
}

/// Ridge values used to reach `λ → 0⁺` for losses without a closed form.
pub const RIDGELESS_LAMBDAS: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// `λ → 0⁺` limit. The quadratic loss is solved at `λ = 0` when a finite
/// `χ` exists; otherwise the errors are extrapolated from
/// [`RIDGELESS_LAMBDAS`] and the remaining statistics are taken at the
/// smallest ridge.
pub fn ridgeless_theory(law: &ScalarLaw, alpha1: f64, loss: LossSpec, opts: &OuterOptions) -> Result<TheorySolution> {
    if loss.kind == LossKind::Quadratic && opts.inner.closed_form {
        if let Ok(s) = outer_minimize_with(law, alpha1, 0.0, loss, opts) {
            return Ok(s);
        }
    }
    let mut sols = Vec::with_capacity(RIDGELESS_LAMBDAS.len());
    for &l in &RIDGELESS_LAMBDAS {
        sols.push(outer_minimize_with(law, alpha1, l, loss, opts)?);
    }
    let test: Vec<f64> = sols.iter().map(|s| s.e_test).collect();
    let train: Vec<f64> = sols.iter().map(|s| s.e_train).collect();
    let mut out = sols.pop().ok_or_else(|| numeric("no ridge solutions"))?;
    out.e_test = extrapolate_to_zero(&RIDGELESS_LAMBDAS, &test)?.clamp(0.0, 1.0);
    out.e_train = extrapolate_to_zero(&RIDGELESS_LAMBDAS, &train)?.max(0.0);
    out.lambda = 0.0;
    out.converged &= sols.iter().all(|s| s.converged);
    Ok(out)
}

/// Widens `[x − w, x + w]` geometrically until `f` is positive at the left
/// end and negative at the right end.
fn expand_bracket<F: Fn(f64) -> f64>(f: F, x: f64, w: f64) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (x - w, x + w);
    let mut step = w;
    for _ in 0..60 {
        let (flo, fhi) = (f(lo), f(hi));
        if flo.is_nan() || fhi.is_nan() {
            break;
        }
        if flo > 0.0 && fhi < 0.0 {
            return Ok((lo, hi));
        }
        step *= 1.5;
        if flo <= 0.0 {
            lo -= step;
        }
        if fhi >= 0.0 {
            hi += step;
        }
    }
    Err(numeric(format!("state equations not bracketed around {x}")))
}
