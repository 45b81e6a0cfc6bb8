//! Deterministic numerical kernels: Gaussian distribution functions,
//! Gauss-Hermite quadrature, damped fixed-point iteration, and small
//! derivative-free minimizers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{numeric, param, Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, accurate to ~1e-16 relative in both tails.
///
/// NaN propagates.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of [`normal_cdf`] on (0, 1).
///
/// Acklam's rational approximation polished with one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e / normal_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Closed form of `∫₀^∞ u² φ(u + a) du`, i.e. `E[(G − a)₊²]` for `G ~ N(0,1)`.
pub fn gaussian_tail_moment2(a: f64) -> f64 {
    let v = (1.0 + a * a) * normal_cdf(-a) - a * normal_pdf(a);
    v.max(0.0)
}

/// Nodes and weights for expectations against the standard normal density.
///
/// `Σ wᵢ h(xᵢ) ≈ E[h(G)]`, exact for polynomials of degree `≤ 2n − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[h(G)]` under the rule.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut h: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * h(x))
            .sum()
    }
}

/// Gauss-Hermite rule of order `n` (2 ≤ n ≤ 256), rescaled to the standard
/// normal weight.
///
/// Nodes are seeded from the eigenvalues of the Jacobi matrix and polished
/// by Newton steps on the orthonormal three-term recurrence, which also
/// yields the weights without cancellation.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if !(2..=256).contains(&n) {
        return Err(param(format!("Gauss-Hermite order {n} outside [2, 256]")));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let nf = n as f64;
    let jacobi = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j + 1 || j == i + 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds = jacobi
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| numeric(format!("Jacobi eigenvalues failed: {e:?}")))?;
    seeds.sort_by(|a, b| b.total_cmp(a));
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..m {
        let mut z = seeds[i].abs();
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| (xi * SQRT_2, wi * inv_sqrt_pi))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if !(total - 1.0).abs().lt(&1e-10) {
        return Err(numeric(format!(
            "Gauss-Hermite weights for order {n} sum to {total}"
        )));
    }
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Settings for [`fixed_point_solve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// Outcome of a damped fixed-point iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the last update.
    pub residual: f64,
    pub converged: bool,
}

/// Iterates `x ← (1 − damping)·x + damping·map(x)` until the sup-norm of the
/// update drops to `tol`.
///
/// Hitting `max_iter` is not an error: the report comes back with
/// `converged = false`. A non-finite iterate is a [`Error::Divergence`].
pub fn fixed_point_solve<F>(mut map: F, x0: &[f64], opts: FixedPointOptions) -> Result<FixedPointReport>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(param(format!("damping {} outside (0, 1]", opts.damping)));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(param("fixed-point start is not finite"));
    }
    let mut x = x0.to_vec();
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let fx = map(&x);
        if fx.len() != x.len() {
            return Err(param("fixed-point map changed the dimension"));
        }
        let next: Vec<f64> = x
            .iter()
            .zip(&fx)
            .map(|(&a, &b)| (1.0 - opts.damping) * a + opts.damping * b)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iterations: it,
                last: x,
            });
        }
        residual = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if residual <= opts.tol {
            return Ok(FixedPointReport {
                solution: x,
                iterations: it,
                residual,
                converged: true,
            });
        }
    }
    Ok(FixedPointReport {
        solution: x,
        iterations: opts.max_iter,
        residual,
        converged: false,
    })
}

/// Golden-section search for the minimum of a unimodal `f` on `bracket`.
///
/// Returns `(argmin, f(argmin))` with the argmin located to within `tol`.
pub fn minimize_scalar<F>(mut f: F, bracket: (f64, f64), tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = bracket;
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(param(format!("degenerate bracket [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(param("tolerance must be positive"));
    }
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    let best = [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .filter(|p| !p.1.is_nan())
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .ok_or_else(|| Error::Evaluation { at: vec![x] })?;
    Ok(best)
}

/// Brent's method for a sign-changing root of `f` on `[a, b]`.
pub fn find_root<F>(mut f: F, a: f64, b: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(param(format!("root not bracketed by [{a}, {b}]")));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if fb.is_nan() {
            return Err(Error::Evaluation { at: vec![b] });
        }
    }
    Err(numeric("root finder did not converge"))
}

/// Value at zero of the polynomial interpolating `(xs[i], ys[i])` (Neville).
///
/// Used for Richardson-style extrapolation in a small parameter.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(param("extrapolation needs matching, nonempty inputs"));
    }
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            let denom = xs[i] - xs[i + k];
            if denom == 0.0 {
                return Err(param("repeated abscissa in extrapolation"));
            }
            p[i] = (xs[i] * p[i + 1] - xs[i + k] * p[i]) / denom;
        }
    }
    Ok(p[0])
}

/// Settings for [`minimize_simplex`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    /// Edge length of the initial simplex.
    pub scale: f64,
    /// Convergence threshold on both the simplex size and the spread of values.
    pub tol: f64,
    /// Iteration cap for each run.
    pub max_iter: usize,
    /// Restarts from the incumbent with a jittered simplex.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            scale: 0.5,
            tol: 1e-10,
            max_iter: 5_000,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Result of [`minimize_simplex`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexResult {
    pub argmin: Vec<f64>,
    pub min: f64,
    pub evaluations: usize,
}

/// Nelder-Mead descent with seeded restarts. Never returns a value worse
/// than `f(x0)`.
pub fn minimize_simplex<F>(mut f: F, x0: &[f64], opts: SimplexOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 || n > 6 {
        return Err(param(format!("simplex dimension {n} outside [1, 6]")));
    }
    if !(opts.scale > 0.0 && opts.tol > 0.0) {
        return Err(param("simplex scale and tolerance must be positive"));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { at: x.to_vec() })
        }
    };
    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0, &mut evals)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    for run in 0..=opts.restarts {
        let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        verts.push(best_x.clone());
        for i in 0..n {
            let mut v = best_x.clone();
            let step = if run == 0 {
                opts.scale
            } else {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * opts.scale * rng.random_range(0.25..1.0)
            };
            v[i] += step;
            verts.push(v);
        }
        let mut vals = Vec::with_capacity(n + 1);
        vals.push(best_f);
        for v in verts.iter().skip(1) {
            vals.push(eval(v, &mut evals)?);
        }
        nelder_mead_run(&mut verts, &mut vals, &mut eval, &mut evals, opts)?;
        let (imin, fmin) = argmin(&vals);
        if fmin < best_f {
            best_f = fmin;
            best_x = verts[imin].clone();
        }
    }
    Ok(SimplexResult {
        argmin: best_x,
        min: best_f,
        evaluations: evals,
    })
}

fn argmin(vals: &[f64]) -> (usize, f64) {
    vals.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc })
}

fn nelder_mead_run<E>(
    verts: &mut [Vec<f64>],
    vals: &mut [f64],
    eval: &mut E,
    evals: &mut usize,
    opts: SimplexOptions,
) -> Result<()>
where
    E: FnMut(&[f64], &mut usize) -> Result<f64>,
{
    let n = verts.len() - 1;
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    for _ in 0..opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        let (ib, iw, isw) = (order[0], order[n], order[n - 1]);

        let size = verts
            .iter()
            .flat_map(|v| v.iter().zip(&verts[ib]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = vals[iw] - vals[ib];
        if size <= opts.tol && spread <= opts.tol * (1.0 + vals[ib].abs()) {
            return Ok(());
        }

        let mut centroid = vec![0.0; verts[0].len()];
        for &i in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&verts[i]) {
                *c += x / n as f64;
            }
        }
        let xr = combine(&centroid, &verts[iw], -1.0);
        let fr = eval(&xr, evals)?;
        if fr < vals[ib] {
            let xe = combine(&centroid, &verts[iw], -2.0);
            let fe = eval(&xe, evals)?;
            if fe < fr {
                verts[iw] = xe;
                vals[iw] = fe;
            } else {
                verts[iw] = xr;
                vals[iw] = fr;
            }
            continue;
        }
        if fr < vals[isw] {
            verts[iw] = xr;
            vals[iw] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[iw] {
            let xc = combine(&centroid, &verts[iw], -0.5);
            let fc = eval(&xc, evals)?;
            (xc, fc)
        } else {
            let xc = combine(&centroid, &verts[iw], 0.5);
            let fc = eval(&xc, evals)?;
            (xc, fc)
        };
        if fc < vals[iw].min(fr) {
            verts[iw] = xc;
            vals[iw] = fc;
            continue;
        }
        let anchor = verts[ib].clone();
        for i in 0..=n {
            if i != ib {
                verts[i] = combine(&anchor, &verts[i], 0.5);
                vals[i] = eval(&verts[i], evals)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by its Maclaurin series, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..400 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    /// Composite Simpson on a fine grid over a truncated domain.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn cdf_matches_series_oracle() {
        assert_eq!(normal_cdf(0.0), 0.5);
        let oracle = 0.5 * (1.0 + erf_series(1.96 / SQRT_2));
        assert!((normal_cdf(1.96) - oracle).abs() < 1e-13);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        for &x in &[0.3, 1.0, 2.5, 4.0] {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-12);
        }
        assert!(normal_cdf(f64::NAN).is_nan());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.01, 0.2, 0.5, 0.77, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-14 * (1.0 + 1.0 / p));
        }
    }

    #[test]
    fn hermite_moments() {
        let r8 = gauss_hermite(8).unwrap();
        assert!((r8.expect(|u| u * u) - 1.0).abs() < 1e-12);
        assert!(r8.expect(|u| u).abs() < 1e-12);
        let r32 = gauss_hermite(32).unwrap();
        // E[G^4] = 3!! = 3
        let oracle: f64 = (1..=3).step_by(2).map(|k| k as f64).product();
        assert!((r32.expect(|u| u.powi(4)) - oracle).abs() < 1e-10);
        for n in [2, 3, 64, 255, 256] {
            let r = gauss_hermite(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "order {n}: {s}");
            for i in 0..n {
                assert!((r.nodes[i] + r.nodes[n - 1 - i]).abs() < 1e-12);
            }
        }
        assert!(gauss_hermite(1).is_err());
        assert!(gauss_hermite(257).is_err());
    }

    #[test]
    fn hermite_high_degree_exactness() {
        let r = gauss_hermite(64).unwrap();
        // E[G^10] = 9!! = 945
        assert!((r.expect(|u| u.powi(10)) - 945.0).abs() < 1e-8);
    }

    #[test]
    fn tail_moment_values() {
        assert!((gaussian_tail_moment2(0.0) - 0.5).abs() < 1e-15);
        assert!(gaussian_tail_moment2(8.0) < 1e-12);
        let oracle = simpson(|u| u * u * normal_pdf(u + 1.0), 0.0, 40.0, 200_000);
        assert!((gaussian_tail_moment2(1.0) - oracle).abs() < 1e-12);
        assert!((gaussian_tail_moment2(1.0) - 0.075_339).abs() < 1e-6);
    }

    #[test]
    fn fixed_point_examples() {
        let opts = FixedPointOptions {
            damping: 1.0,
            tol: 1e-10,
            max_iter: 1000,
        };
        let r = fixed_point_solve(|x| vec![0.5 * x[0]], &[1.0], opts).unwrap();
        assert!(r.converged && r.solution[0].abs() < 1e-9);

        let r = fixed_point_solve(|x| x.to_vec(), &[3.7, -1.0], opts).unwrap();
        assert!(r.converged && r.iterations <= 1);
        assert_eq!(r.solution, vec![3.7, -1.0]);

        let r = fixed_point_solve(|x| vec![x[0].cos()], &[1.0], opts).unwrap();
        let dottie = {
            let (mut a, mut b) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m - m.cos() > 0.0 {
                    b = m
                } else {
                    a = m
                }
            }
            0.5 * (a + b)
        };
        assert!((r.solution[0] - dottie).abs() < 1e-8);
    }

    #[test]
    fn fixed_point_reports_divergence() {
        let opts = FixedPointOptions {
            damping: 1.0,
            tol: 1e-10,
            max_iter: 5000,
        };
        let err = fixed_point_solve(|x| vec![x[0] * 1e300], &[10.0], opts).unwrap_err();
        match err {
            Error::Divergence { last, .. } => assert!(last[0].is_finite()),
            e => panic!("unexpected {e:?}"),
        }
        let r = fixed_point_solve(|x| vec![x[0] + 1.0], &[0.0], FixedPointOptions { max_iter: 5, ..opts }).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn scalar_minimizer() {
        let (x, _) = minimize_scalar(|b| (b - 2.0).powi(2), (-10.0, 10.0), 1e-8).unwrap();
        assert!((x - 2.0).abs() < 1e-8);
        let (x, _) = minimize_scalar(f64::abs, (-1.0, 1.0), 1e-9).unwrap();
        assert!(x.abs() < 1e-9);
        let g = |b: f64| 0.5 * normal_cdf(-b) + 0.5 * normal_cdf(b - 2.0);
        let (x, _) = minimize_scalar(g, (-10.0, 10.0), 1e-7).unwrap();
        let grid_best = (0..=200_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
            .min_by(|a, b| g(*a).total_cmp(&g(*b)))
            .unwrap();
        assert!((grid_best - 1.0).abs() < 2e-4);
        assert!((x - 1.0).abs() < 1e-6);
        assert!(minimize_scalar(g, (1.0, 1.0), 1e-6).is_err());
    }

    #[test]
    fn root_finder() {
        let r = find_root(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - SQRT_2).abs() < 1e-13);
        assert!(find_root(|x| x * x + 1.0, 0.0, 2.0, 1e-10).is_err());
    }

    #[test]
    fn neville_recovers_polynomial_intercept() {
        let xs = [0.1, 0.2, 0.4];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x + 5.0 * x * x).collect();
        assert!((extrapolate_to_zero(&xs, &ys).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_examples() {
        let r = minimize_simplex(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 1.0], SimplexOptions::default()).unwrap();
        assert!(r.argmin.iter().all(|v| v.abs() < 1e-5));

        let r = minimize_simplex(|_| 4.2, &[0.3, -0.7], SimplexOptions::default()).unwrap();
        assert_eq!(r.argmin, vec![0.3, -0.7]);
        assert_eq!(r.min, 4.2);

        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize_simplex(rosen, &[-1.2, 1.0], SimplexOptions::default()).unwrap();
        assert!((r.argmin[0] - 1.0).abs() < 1e-3 && (r.argmin[1] - 1.0).abs() < 1e-3);

        assert!(matches!(
            minimize_simplex(|_| f64::NAN, &[0.0], SimplexOptions::default()),
            Err(Error::Evaluation { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tail_moment_matches_quadrature(a in -6.0f64..6.0) {
                let top = 12.0 + a.abs();
                let q = simpson(|u| u * u * normal_pdf(u + a), 0.0, top, 20_000);
                prop_assert!((gaussian_tail_moment2(a) - q).abs() < 1e-9);
            }

            #[test]
            fn cdf_is_monotone(x in -30.0f64..30.0, dx in 0.0f64..5.0) {
                prop_assert!(normal_cdf(x) <= normal_cdf(x + dx));
                prop_assert!((0.0..=1.0).contains(&normal_cdf(x)));
            }

            #[test]
            fn fixed_point_ignores_damping(c in -0.9f64..0.9, d in 0.0f64..2.0, damp in 0.2f64..1.0) {
                let map = |x: &[f64]| vec![c * x[0] + d];
                let opts = FixedPointOptions { damping: damp, tol: 1e-13, max_iter: 100_000 };
                let r = fixed_point_solve(map, &[0.0], opts).unwrap();
                prop_assert!(r.converged);
                prop_assert!((r.solution[0] - d / (1.0 - c)).abs() < 1e-10);
            }

            #[test]
            fn simplex_never_worse_than_start(x0 in -3.0f64..3.0, y0 in -3.0f64..3.0, shift in -2.0f64..2.0) {
                let f = |x: &[f64]| (x[0] - shift).abs() + (x[0] * x[1]).sin() + 0.1 * x[1] * x[1];
                let start = f(&[x0, y0]);
                let r = minimize_simplex(f, &[x0, y0], SimplexOptions::default()).unwrap();
                prop_assert!(r.min <= start);
                prop_assert_eq!(r.min, f(&r.argmin));
            }
        }
    }
}
