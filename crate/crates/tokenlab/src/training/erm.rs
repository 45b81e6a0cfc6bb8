//! Ridge-regularized convex ERM over a fixed design, by damped Newton.
//!
//! Objective: `(1/n) Σ ℓ(aᵢᵀθ, yᵢ) + (λ/2)‖w‖²` where `θ = (w, b)` and the
//! last design column is the constant 1 (the bias is not penalized).

use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::losses::{loss_eval, LossKind, LossSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmOptions {
    /// Exit when the gradient sup-norm drops to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Problems up to this many unknowns use a dense Cholesky factorization;
    /// larger ones use preconditioned conjugate gradients.
    pub direct_max_dim: usize,
    /// Norm of `(w, b)` beyond which an unregularized logistic run is
    /// declared separable.
    pub norm_cap: f64,
    pub armijo: f64,
}

impl Default for ErmOptions {
    fn default() -> Self {
        ErmOptions {
            tol: 1e-8,
            max_iter: 500,
            direct_max_dim: 4000,
            norm_cap: 1e6,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmReport {
    pub w: Vec<f64>,
    pub b: f64,
    /// Regularized objective at the returned point.
    pub objective: f64,
    /// Objective after each accepted step, starting at the origin.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Unregularized logistic run that either separated the data strictly or
    /// ran past the norm cap.
    pub separable: bool,
}

/// A design matrix with a trailing column of ones, plus labels.
#[derive(Clone, Debug)]
pub struct Design {
    pub a: Mat<f64>,
    pub y: Vec<f64>,
}

impl Design {
    /// Builds the design from feature rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n != y.len() {
            return Err(param("design needs matching, nonempty rows and labels"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(param("ragged feature rows"));
        }
        let a = Mat::from_fn(n, p + 1, |i, j| if j == p { 1.0 } else { rows[i][j] });
        Ok(Design { a, y })
    }

    /// Empty design ready to be filled row by row with [`Design::set_row`].
    pub fn with_shape(n: usize, p: usize) -> Self {
        let mut a = Mat::zeros(n, p + 1);
        for i in 0..n {
            a[(i, p)] = 1.0;
        }
        Design { a, y: vec![0.0; n] }
    }

    pub fn set_row(&mut self, i: usize, features: &[f64], y: f64) {
        for (j, &v) in features.iter().enumerate() {
            self.a[(i, j)] = v;
        }
        self.y[i] = y;
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Number of feature columns (excluding the bias).
    pub fn p(&self) -> usize {
        self.a.ncols() - 1
    }
}

fn mat_vec(a: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    let vm = Mat::from_fn(v.len(), 1, |i, _| v[i]);
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(out.as_mut(), Accum::Replace, a, vm.as_ref(), 1.0, Par::Seq);
    (0..a.nrows()).map(|i| out[(i, 0)]).collect()
}

/// Value and gradient of the objective at `theta = (w, b)`.
pub fn erm_objective(design: &Design, lambda: f64, loss: LossSpec, theta: &[f64]) -> (f64, Vec<f64>) {
    let z = mat_vec(design.a.as_ref(), theta);
    let (value, _, g) = objective_parts(design, lambda, loss, theta, &z);
    (value, g)
}

/// Returns `(objective, per-sample ℓ″, gradient)` given the scores `z`.
fn objective_parts(design: &Design, lambda: f64, loss: LossSpec, theta: &[f64], z: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = design.n() as f64;
    let p = design.p();
    let mut value = 0.0;
    let mut d1 = vec![0.0; z.len()];
    let mut d2 = vec![0.0; z.len()];
    for i in 0..z.len() {
        let e = loss_eval(loss, z[i], design.y[i]);
        value += e.value;
        d1[i] = e.d1 / n;
        d2[i] = e.d2 / n;
    }
    let ww: f64 = theta[..p].iter().map(|v| v * v).sum();
    value = value / n + 0.5 * lambda * ww;
    let mut g = mat_vec(design.a.transpose(), &d1);
    for j in 0..p {
        g[j] += lambda * theta[j];
    }
    (value, d2, g)
}

fn objective_at(design: &Design, lambda: f64, loss: LossSpec, theta: &[f64], z: &[f64]) -> f64 {
    let p = design.p();
    let s: f64 = z.iter().zip(&design.y).map(|(&zi, &yi)| loss_eval(loss, zi, yi).value).sum();
    let ww: f64 = theta[..p].iter().map(|v| v * v).sum();
    s / design.n() as f64 + 0.5 * lambda * ww
}

/// `Aᵀ diag(h) A + λ·diag(1,…,1,0)`, lower triangle, accumulated by row blocks.
fn hessian(design: &Design, lambda: f64, h: &[f64]) -> Mat<f64> {
    const BLOCK: usize = 1024;
    let (n, m) = (design.n(), design.a.ncols());
    let mut out = Mat::<f64>::zeros(m, m);
    let mut start = 0;
    let mut first = true;
    while start < n {
        let rows = BLOCK.min(n - start);
        let blk = Mat::from_fn(rows, m, |i, j| design.a[(start + i, j)] * h[start + i].sqrt());
        triangular::matmul(
            out.as_mut(),
            BlockStructure::TriangularLower,
            if first { Accum::Replace } else { Accum::Add },
            blk.transpose(),
            BlockStructure::Rectangular,
            blk.as_ref(),
            BlockStructure::Rectangular,
            1.0,
            Par::Seq,
        );
        first = false;
        start += rows;
    }
    for j in 0..m - 1 {
        out[(j, j)] += lambda;
    }
    out
}

fn direct_direction(design: &Design, lambda: f64, h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let mut hm = hessian(design, lambda, h);
    let m = g.len();
    let rhs = Mat::from_fn(m, 1, |i, _| -g[i]);
    let scale = (0..m).map(|j| hm[(j, j)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for attempt in 0..6 {
        if attempt > 0 {
            let next = scale * 1e-12 * 100f64.powi(attempt - 1);
            for j in 0..m {
                hm[(j, j)] += next - jitter;
            }
            jitter = next;
        }
        if let Ok(llt) = hm.llt(Side::Lower) {
            let x = llt.solve(&rhs);
            let v: Vec<f64> = (0..m).map(|i| x[(i, 0)]).collect();
            if v.iter().all(|e| e.is_finite()) {
                return Some(v);
            }
        }
    }
    None
}

/// Jacobi-preconditioned CG on `H δ = −g` with matrix-free products.
fn cg_direction(design: &Design, lambda: f64, h: &[f64], g: &[f64], rel_tol: f64) -> Vec<f64> {
    let m = g.len();
    let p = m - 1;
    let a = design.a.as_ref();
    let hv = |v: &[f64]| -> Vec<f64> {
        let mut av = mat_vec(a, v);
        for (x, &hi) in av.iter_mut().zip(h) {
            *x *= hi;
        }
        let mut out = mat_vec(a.transpose(), &av);
        for j in 0..p {
            out[j] += lambda * v[j];
        }
        out
    };
    let mut diag = vec![0.0; m];
    for j in 0..m {
        let col = a.col(j);
        let mut s = 0.0;
        for i in 0..design.n() {
            s += h[i] * col[i] * col[i];
        }
        diag[j] = s + if j < p { lambda } else { 0.0 };
        if !(diag[j] > 0.0) {
            diag[j] = 1.0;
        }
    }
    let mut x = vec![0.0; m];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let r0 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r0 == 0.0 {
        return x;
    }
    let mut zv: Vec<f64> = r.iter().zip(&diag).map(|(a, b)| a / b).collect();
    let mut pv = zv.clone();
    let mut rz: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
    for _ in 0..(4 * m).max(50) {
        let hp = hv(&pv);
        let php: f64 = pv.iter().zip(&hp).map(|(a, b)| a * b).sum();
        if !(php > 0.0) {
            break;
        }
        let step = rz / php;
        for j in 0..m {
            x[j] += step * pv[j];
            r[j] -= step * hp[j];
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= rel_tol * r0 {
            break;
        }
        for j in 0..m {
            zv[j] = r[j] / diag[j];
        }
        let rz_new: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for j in 0..m {
            pv[j] = zv[j] + beta * pv[j];
        }
    }
    x
}

/// Minimizes the regularized empirical risk from the origin.
pub fn solve_erm(design: &Design, lambda: f64, loss: LossSpec, opts: ErmOptions) -> Result<ErmReport> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(param(format!("lambda = {lambda} must be finite and nonnegative")));
    }
    let m = design.a.ncols();
    let p = m - 1;
    let watch_separable = lambda == 0.0 && loss.kind == LossKind::Logistic;
    let mut theta = vec![0.0; m];
    let mut z = vec![0.0; design.n()];
    let (mut value, mut h, mut g) = objective_parts(design, lambda, loss, &theta, &z);
    let mut history = vec![value];
    let mut iterations = 0;
    let mut converged = false;
    let mut separable = false;
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));

    while iterations < opts.max_iter {
        if sup(&g) <= opts.tol {
            converged = true;
            break;
        }
        if watch_separable && iterations > 0 && z.iter().zip(&design.y).all(|(&zi, &yi)| zi * yi > 0.0) {
            separable = true;
            break;
        }
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut dir = if m <= opts.direct_max_dim {
            direct_direction(design, lambda, &h, &g)
        } else {
            Some(cg_direction(design, lambda, &h, &g, gnorm.sqrt().min(0.1).max(1e-12)))
        }
        .unwrap_or_else(|| g.iter().map(|v| -v).collect());
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let ad = mat_vec(design.a.as_ref(), &dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let zc: Vec<f64> = z.iter().zip(&ad).map(|(a, b)| a + t * b).collect();
            let vc = objective_at(design, lambda, loss, &cand, &zc);
            if vc <= value + opts.armijo * t * slope {
                accepted = Some((cand, zc));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((cand, zc)) = accepted else {
            // No decrease possible at working precision.
            break;
        };
        theta = cand;
        z = zc;
        (value, h, g) = objective_parts(design, lambda, loss, &theta, &z);
        history.push(value);
        if watch_separable && theta.iter().map(|v| v * v).sum::<f64>().sqrt() > opts.norm_cap {
            separable = true;
            break;
        }
    }
    if !converged && !separable && sup(&g) <= opts.tol {
        converged = true;
    }
    if watch_separable && !separable && z.iter().zip(&design.y).all(|(&zi, &yi)| zi * yi > 0.0) {
        separable = true;
    }
    Ok(ErmReport {
        w: theta[..p].to_vec(),
        b: theta[p],
        objective: value,
        history,
        iterations,
        grad_norm: sup(&g),
        converged,
        separable,
    })
}
