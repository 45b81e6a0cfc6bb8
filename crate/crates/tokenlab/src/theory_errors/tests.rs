use super::*;
use crate::data_model::TaskConfig;
use crate::losses::LossSpec;
use crate::numerics::{extrapolate_to_zero, normal_cdf, normal_pdf};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(l: usize, r: usize, theta: f64, pi: f64) -> TaskConfig {
    TaskConfig::new(l, r, theta, pi, 8).unwrap()
}

fn law(gamma: f64, beta: f64, c: &TaskConfig, n: usize, seed: u64) -> ScalarLaw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scalar_law(gamma, 1.0, beta, c, n, &mut rng).unwrap()
}

fn mean_var<I: Iterator<Item = f64>>(it: I) -> (f64, f64, usize) {
    let v: Vec<f64> = it.collect();
    let n = v.len();
    let m = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, var, n)
}

#[test]
fn zero_temperature_law_is_uniform_pooling() {
    let c = cfg(5, 2, 3.0, 0.4);
    let lw = law(0.3, 0.0, &c, 5_000, 1);
    for p in &lw.points {
        assert!((p.c_z - 1.0 / 5f64.sqrt()).abs() < 1e-15);
    }
    assert!(!lw.low_sample_warning);
    assert!(law(0.3, 1.0, &c, 500, 1).low_sample_warning);
}

#[test]
fn zero_temperature_coordinate_moments() {
    let (l, r, th) = (4usize, 2usize, 3.0);
    let c = cfg(l, r, th, 0.5);
    let lw = law(0.0, 0.0, &c, 100_000, 2);
    // negatives: c_ξ = ‖s‖ z₀ with ‖s‖ = 1/√L
    let (m, var, n) = mean_var(lw.points.iter().filter(|p| p.y < 0.0).map(|p| p.c_xi));
    let target = 1.0 / l as f64;
    let se_var = target * (2.0 / (n - 1) as f64).sqrt();
    assert!((var - target).abs() < 3.0 * se_var, "{var} vs {target}");
    assert!(m.abs() < 3.0 * (target / n as f64).sqrt());
    // positives: E[c_ξ] = θR/L
    let (m, var, n) = mean_var(lw.points.iter().filter(|p| p.y > 0.0).map(|p| p.c_xi));
    let target = th * r as f64 / l as f64;
    assert!((m - target).abs() < 3.0 * (var / n as f64).sqrt());
    assert!((lw.positive_mass() - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
}

#[test]
fn positive_temperature_norms_in_range() {
    let c = cfg(6, 2, 2.0, 0.5);
    let lw = law(0.7, 2.0, &c, 10_000, 3);
    for p in &lw.points {
        assert!(p.c_z > 1.0 / 6f64.sqrt() - 1e-15 && p.c_z <= 1.0);
    }
}

#[test]
fn colinear_law_drops_query_coordinate() {
    let c = cfg(3, 1, 2.0, 0.5);
    let lw = law(1.0, 1.0, &c, 2_000, 4);
    assert!(lw.degenerate());
    for p in &lw.points {
        assert_eq!(p.c_q, 0.0);
        let expect = p.gs + if p.y > 0.0 { 2.0 * p.vs } else { 0.0 };
        assert!((p.c_xi - expect).abs() < 1e-14);
    }
    assert!(sample_scalar_law(1.5, 1.0, 1.0, &c, 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn law_is_independent_of_worker_count() {
    let c = cfg(4, 1, 2.0, 0.3);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| law(0.5, 1.0, &c, 20_000, 9));
    let b = four.install(|| law(0.5, 1.0, &c, 20_000, 9));
    assert_eq!(a, b);
}

#[test]
fn test_error_examples() {
    let c = cfg(4, 1, 2.0, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = LawParams {
        gamma: 0.4,
        q_norm: 1.0,
        beta: 1.0,
    };
    let e = test_error_formula(0.0, 0.0, 1.0, 0.0, p, &c, 10_000, &mut rng).unwrap();
    assert!((e.value - 0.5).abs() < 1e-12);
    let lw = law(0.4, 1.0, &c, 50_000, 6);
    let e = lw.test_error(0.3, 0.8, 1.0, -60.0).unwrap();
    assert!((e.value - lw.positive_mass()).abs() < 1e-12);
    assert!((lw.positive_mass() - 0.3).abs() < 3.0 * (0.21f64 / 5e4).sqrt());
    assert!(test_error_formula(0.0, 0.0, 0.0, 0.0, p, &c, 10, &mut rng).is_err());
}

#[test]
fn zero_temperature_test_error_reduces_to_closed_form() {
    let (l, r, th, pi) = (4usize, 1usize, 3.0, 0.4);
    let c = cfg(l, r, th, pi);
    let (mu1, mu2, mu3, b) = (0.0, 0.7, 1.3, -0.2);
    let lw = law(0.0, 0.0, &c, 200_000, 7);
    let est = lw.test_error(mu1, mu2, mu3, b).unwrap();
    let sl = (l as f64).sqrt();
    let closed = (1.0 - pi) * normal_cdf(sl * b / mu3)
        + pi * normal_cdf(sl * (-b - th * r as f64 * mu2 / l as f64) / mu3);
    assert!((est.value - closed).abs() < 3.0 * est.std_err, "{} vs {closed}", est.value);
    let exact = pooled_law(&c).unwrap().test_error(mu1, mu2, mu3, b).unwrap();
    assert!((exact.value - closed).abs() < 1e-13);
}

#[test]
fn test_error_decreases_with_signal_overlap() {
    let c = cfg(4, 1, 2.0, 0.5);
    let lw = law(0.6, 1.0, &c, 20_000, 8);
    let mut prev = f64::INFINITY;
    for k in 0..10 {
        let e = lw.test_error(0.2, 0.2 * k as f64, 1.0, -0.3).unwrap().value;
        // same draws on each call, so differences carry no Monte-Carlo noise
        assert!(e <= prev + 1e-15);
        prev = e;
    }
}

#[test]
fn quadratic_chi_examples() {
    let c = cfg(2, 1, 1.0, 0.5);
    let pl = pooled_law(&c).unwrap();
    // β = 0, λ → 0, α₁ = 3, L = 2 → χ = L/(α₁ − 1) = 1
    let s = inner_fixed_point(0.0, 0.0, 0.0, &pl, 3.0, 1e-10, LossSpec::QUADRATIC).unwrap();
    assert!((s.chi - 1.0).abs() < 1e-8, "{}", s.chi);
    // α₁ < 1: λχ → 1/α₁ − 1
    let lam = 1e-9;
    let s = inner_fixed_point(0.0, 0.0, 0.0, &pl, 0.5, lam, LossSpec::QUADRATIC).unwrap();
    assert!((lam * s.chi - 1.0).abs() < 1e-4, "{}", lam * s.chi);
}

#[test]
fn general_solver_matches_quadratic_closed_form() {
    let c = cfg(3, 1, 2.0, 0.4);
    let lw = law(0.5, 1.5, &c, 3_000, 10);
    let general = InnerOptions {
        closed_form: false,
        ..InnerOptions::default()
    };
    for (a1, lam) in [(0.5, 1e-2), (2.0, 1e-3), (4.0, 0.1)] {
        let q = inner_fixed_point(0.3, 0.6, -0.1, &lw, a1, lam, LossSpec::QUADRATIC).unwrap();
        let g = inner_fixed_point_with(0.3, 0.6, -0.1, &lw, a1, lam, LossSpec::QUADRATIC, &general, None).unwrap();
        assert!(g.converged);
        assert!((g.chi - q.chi).abs() < 1e-8 * q.chi, "{} vs {}", g.chi, q.chi);
        assert!((g.nu - q.nu).abs() < 1e-8 * q.nu.max(1.0));
        assert!((g.phi - q.phi).abs() < 1e-8 * q.phi.max(1.0));
        let h: f64 = lw.expect(|p| {
            let t = p.c_z * p.c_z * g.chi;
            t / (1.0 + t)
        });
        assert!((1.0 / a1 - h - lam * g.chi).abs() < 1e-8);
    }
}

#[test]
fn logistic_state_equations_resolve() {
    let c = cfg(3, 1, 2.0, 0.4);
    let lw = law(0.5, 1.0, &c, 2_000, 11);
    for (a1, lam) in [(0.5, 1e-2), (2.0, 1e-3), (1.0, 1e-4)] {
        let s = inner_fixed_point(0.4, 0.9, -0.3, &lw, a1, lam, LossSpec::LOGISTIC).unwrap();
        assert!(s.converged);
        let r = equation_residuals(&lw, 0.4, 0.9, -0.3, a1, lam, LossSpec::LOGISTIC, s.nu, s.chi, 64).unwrap();
        assert!(r[0] <= 1e-7 && r[1] <= 1e-7, "{a1} {lam} {r:?} {s:?}");
    }
}

#[test]
fn symmetric_task_gives_chance_error() {
    let c = cfg(3, 1, 0.0, 0.5);
    let lw = law(0.3, 1.0, &c, 4_000, 12);
    let s = outer_minimize(&lw, 2.0, 1e-2, LossSpec::QUADRATIC).unwrap();
    assert!(s.mu2.abs() < 0.05 && s.b_hat.abs() < 0.05, "{s:?}");
    assert!((s.e_test - 0.5).abs() < 0.02);
    let pl = pooled_law(&c).unwrap();
    let s = pooled_theory(&c, 2.0, 1e-2, LossSpec::LOGISTIC).unwrap();
    assert!(s.mu2.abs() < 1e-6 && s.b_hat.abs() < 1e-6, "{s:?}");
    assert!((s.e_test - 0.5).abs() < 1e-9);
    assert!(pl.degenerate());
}

#[test]
fn pooled_large_ratio_approaches_closed_form() {
    // π = 1/2, X = θR/√L = 2
    let c = cfg(4, 1, 4.0, 0.5);
    let s = pooled_theory(&c, 1e4, 1e-8, LossSpec::QUADRATIC).unwrap();
    let l = 2.0;
    assert!((s.mu2 / l - 0.5).abs() < 1e-3, "{}", s.mu2 / l);
    assert!((s.b_hat + 0.5).abs() < 1e-3, "{}", s.b_hat);
    let r = ridgeless_quadratic(Model::Pooled, &c, None).unwrap();
    assert!((r.e_test_inf - normal_cdf(-1.0)).abs() < 1e-12);
    assert!((s.e_test - r.e_test_inf).abs() < 1e-3);
}

#[test]
fn pooled_law_matches_sampled_zero_temperature_law() {
    let c = cfg(4, 1, 3.0, 0.4);
    let lw = law(0.0, 0.0, &c, 200_000, 13);
    let a = outer_minimize(&lw, 2.0, 1e-3, LossSpec::QUADRATIC).unwrap();
    let b = pooled_theory(&c, 2.0, 1e-3, LossSpec::QUADRATIC).unwrap();
    assert!((a.e_test - b.e_test).abs() < 0.01, "{} vs {}", a.e_test, b.e_test);
    assert!((a.e_train - b.e_train).abs() < 0.01);
    assert!((a.mu2 - b.mu2).abs() < 0.05 * b.mu2.abs());
    assert!(a.mu1.abs() < 0.05);
}

#[test]
fn pooled_ridgeless_closed_form_is_exact_in_ratio() {
    for (l, r, th, pi) in [(4usize, 1usize, 4.0, 0.5), (5, 2, 2.0, 0.3), (9, 3, 1.5, 0.7)] {
        let c = cfg(l, r, th, pi);
        let rq = ridgeless_quadratic(Model::Pooled, &c, None).unwrap();
        let x = c.pooled_snr();
        let a = rq.overlaps_inf[0];
        let b = rq.b_inf;
        for alpha in [1.5, 3.0, 20.0] {
            let s = pooled_theory(&c, alpha, 0.0, LossSpec::QUADRATIC).unwrap();
            let sd = (a * a + rq.noise_coeff / (alpha - 1.0)).sqrt();
            let e = (1.0 - pi) * normal_cdf(b / sd) + pi * normal_cdf((-b - x * a) / sd);
            assert!((s.e_test - e).abs() < 1e-9, "{} vs {e}", s.e_test);
            assert!((s.b_hat - b).abs() < 1e-9);
        }
    }
}

#[test]
fn vectorized_ridgeless_examples() {
    let c = cfg(4, 1, 4.0, 0.5);
    for alpha in [5.0, 8.0, 40.0] {
        let v = vectorized_theory(&c, alpha, 0.0, LossSpec::QUADRATIC).unwrap();
        assert!((v.theory.chi - 4.0 / (alpha - 4.0)).abs() < 1e-12);
    }
    let v = vectorized_theory(&c, 1e7, 0.0, LossSpec::QUADRATIC).unwrap();
    let p = ridgeless_quadratic(Model::Pooled, &c, None).unwrap();
    assert!((v.theory.b_hat + 0.5).abs() < 1e-5 && (p.b_inf + 0.5).abs() < 1e-12);
    assert!(vectorized_theory(&c, 3.0, 0.0, LossSpec::QUADRATIC).is_err());
}

#[test]
fn vectorized_ridgeless_closed_form_is_exact_in_ratio() {
    for (l, r, th, pi) in [(4usize, 1usize, 4.0, 0.5), (5, 2, 2.0, 0.3), (6, 3, 1.5, 0.7)] {
        let c = cfg(l, r, th, pi);
        let rq = ridgeless_quadratic(Model::Vectorized, &c, None).unwrap();
        let (rm, nu_inf) = (rq.overlaps_inf[0], rq.overlaps_inf[1]);
        let b = rq.b_inf;
        for alpha in [1.5 * l as f64, 40.0] {
            let v = vectorized_theory(&c, alpha, 0.0, LossSpec::QUADRATIC).unwrap();
            let chi = l as f64 / (alpha - l as f64);
            let nu = (nu_inf * nu_inf + chi * rq.noise_coeff / l as f64).sqrt();
            let e = (1.0 - pi) * normal_cdf(b / nu) + pi * normal_cdf((-b - rm) / nu);
            assert!((v.theory.nu - nu).abs() < 1e-9, "{} vs {nu}", v.theory.nu);
            assert!((v.theory.e_test - e).abs() < 1e-9);
            assert!((v.m.iter().sum::<f64>() * r as f64 / l as f64 - rm).abs() < 1e-9);
        }
    }
}

#[test]
fn vectorized_general_path_matches_linear_system() {
    let c = cfg(4, 2, 2.0, 0.4);
    let opts = VectorizedOptions {
        closed_form: false,
        ..VectorizedOptions::default()
    };
    for (alpha, lam) in [(2.0, 1e-2), (8.0, 1e-3)] {
        let q = vectorized_theory(&c, alpha, lam, LossSpec::QUADRATIC).unwrap();
        let g = vectorized_theory_with(&c, alpha, lam, LossSpec::QUADRATIC, &opts).unwrap();
        assert!(g.theory.converged);
        for (a, b) in q.m.iter().zip(&g.m) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((q.theory.nu - g.theory.nu).abs() < 1e-8);
        assert!((q.theory.e_train - g.theory.e_train).abs() < 1e-8);
        assert!(q.theory.residuals[0] < 1e-9 && q.theory.residuals[1] < 1e-9);
    }
    let l = vectorized_theory(&c, 3.0, 1e-2, LossSpec::LOGISTIC).unwrap();
    assert!(l.theory.converged && l.theory.residuals[0] < 1e-7 && l.theory.residuals[1] < 1e-7);
}

#[test]
fn correction_ratio_is_sequence_length() {
    let c = cfg(4, 1, 4.0, 0.5);
    let ep = ridgeless_quadratic(Model::Pooled, &c, None).unwrap();
    let ev = ridgeless_quadratic(Model::Vectorized, &c, None).unwrap();
    assert!((ep.e_test_inf - ev.e_test_inf).abs() < 1e-12);
    let alphas = [1e2, 1e3, 1e4];
    let inv: Vec<f64> = alphas.iter().map(|a| 1.0 / a).collect();
    let cp: Vec<f64> = alphas
        .iter()
        .map(|&a| a * (pooled_theory(&c, a, 0.0, LossSpec::QUADRATIC).unwrap().e_test - ep.e_test_inf))
        .collect();
    let cv: Vec<f64> = alphas
        .iter()
        .map(|&a| a * (vectorized_theory(&c, a, 0.0, LossSpec::QUADRATIC).unwrap().theory.e_test - ev.e_test_inf))
        .collect();
    let ratio = extrapolate_to_zero(&inv, &cv).unwrap() / extrapolate_to_zero(&inv, &cp).unwrap();
    assert!((ratio / 4.0 - 1.0).abs() < 0.05, "{ratio}");
    assert!((ev.correction_coeff / ep.correction_coeff - 4.0).abs() < 1e-9);
    assert!((extrapolate_to_zero(&inv, &cp).unwrap() / ep.correction_coeff - 1.0).abs() < 1e-3);
}

#[test]
fn attention_ridgeless_expansion_matches_solver() {
    let c = cfg(3, 1, 3.0, 0.4);
    let lw = law(0.8, 1.0, &c, 50_000, 14);
    let rq = ridgeless_quadratic(Model::Attention, &c, Some(&lw)).unwrap();
    let alpha = 2e3;
    let s = outer_minimize(&lw, alpha, 0.0, LossSpec::QUADRATIC).unwrap();
    let pred = rq.e_test_inf + rq.correction_coeff / alpha;
    let first = (rq.correction_coeff / alpha).abs();
    assert!((s.e_test - pred).abs() < 0.05 * first, "{} vs {pred} ({first})", s.e_test);
    let colinear = law(1.0, 1.0, &c, 2_000, 15);
    assert!(ridgeless_quadratic(Model::Attention, &c, Some(&colinear)).is_err());
}

#[test]
fn attention_residual_depends_on_alignment() {
    let c = cfg(4, 1, 5.0, 0.5);
    let pooled = ridgeless_quadratic(Model::Pooled, &c, None).unwrap().e_test_inf;
    let aligned = ridgeless_quadratic(Model::Attention, &c, Some(&law(0.99, 1.0, &c, 100_000, 16)))
        .unwrap()
        .e_test_inf;
    let blind = ridgeless_quadratic(Model::Attention, &c, Some(&law(0.0, 1.0, &c, 100_000, 17)))
        .unwrap()
        .e_test_inf;
    assert!(aligned < pooled, "{aligned} vs {pooled}");
    assert!(blind > pooled, "{blind} vs {pooled}");
}

fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn tail_by_quadrature(a: f64) -> f64 {
    let top = 40.0 + a.abs();
    (0..200)
        .map(|k| {
            let (lo, hi) = (top * k as f64 / 200.0, top * (k + 1) as f64 / 200.0);
            adaptive_simpson(|u| u * u * normal_pdf(u + a), lo, hi, 1e-16)
        })
        .sum()
}

#[test]
fn capacity_examples() {
    let c = cfg(4, 1, 0.0, 0.5);
    let p = capacity(Model::Pooled, &c, None).unwrap();
    assert!((p.alpha_star - 2.0).abs() < 1e-8, "{p:?}");
    // grid oracle over (s, b)
    let mut best: f64 = 0.0;
    for i in 0..=100 {
        for j in 0..=200 {
            let (s, b) = (i as f64 / 100.0, -2.0 + j as f64 / 50.0);
            let den = 0.5 * tail_by_quadrature(b) + 0.5 * tail_by_quadrature(-b);
            best = best.max((1.0 - s * s) / den);
        }
    }
    assert!((best - 2.0).abs() < 1e-9);
    assert!(p.argmax[0].abs() < 1e-4 && p.argmax[1].abs() < 1e-4);
    let v = capacity(Model::Vectorized, &c, None).unwrap();
    assert!((v.alpha_star / p.alpha_star - 4.0).abs() < 1e-6 * 4.0);
}

#[test]
fn capacity_without_signal_ignores_shape() {
    let base = capacity(Model::Pooled, &cfg(2, 1, 0.0, 0.3), None).unwrap().alpha_star;
    for (l, r, th) in [(7usize, 3usize, 0.0), (3, 2, 0.0)] {
        let a = capacity(Model::Pooled, &cfg(l, r, th, 0.3), None).unwrap().alpha_star;
        assert!((a - base).abs() < 1e-9 * base);
    }
    // the objective then has s = 0 and reduces to the classical biased perceptron
    let mut best: f64 = 0.0;
    for j in 0..=4000 {
        let b = -3.0 + j as f64 * 1.5e-3;
        best = best.max(pooled_capacity_objective(0.0, 0.3, 0.0, b));
    }
    assert!(best <= base * (1.0 + 1e-12) && best > base * (1.0 - 1e-6));
}

#[test]
fn capacity_integrands_match_quadrature_along_path() {
    let c = cfg(2, 1, 2.0, 0.3);
    let x = c.pooled_snr();
    let p = capacity(Model::Pooled, &c, None).unwrap();
    let (s, b) = (p.argmax[0], p.argmax[1]);
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let (ss, bb) = (t * s, -1.0 + t * (b + 1.0));
        let direct = 0.3 * tail_by_quadrature(bb + x * ss) + 0.7 * tail_by_quadrature(-bb);
        let fast = (1.0 - ss * ss) / pooled_capacity_objective(x, 0.3, ss, bb);
        assert!((direct - fast).abs() < 1e-9, "{direct} vs {fast}");
    }
}

#[test]
fn capacity_ordering_at_reference_point() {
    let c = cfg(2, 1, 2.0, 0.3);
    let lw = law(0.99, 1.0, &c, 200_000, 18);
    let p = capacity(Model::Pooled, &c, None).unwrap().alpha_star;
    let v = capacity(Model::Vectorized, &c, None).unwrap().alpha_star;
    let a = capacity(Model::Attention, &c, Some(&lw)).unwrap().alpha_star;
    assert!((p - 3.0433).abs() < 1e-3, "{p}");
    assert!(v > a && a > p, "{v} {a} {p}");
}

#[test]
fn limit_examples() {
    let q = |model, snr, pi| LimitQuery {
        model,
        snr,
        pi,
        attention_ratio: None,
    };
    let r = limit_optimal_error(&q(Model::Pooled, 0.0, 0.3)).unwrap();
    assert_eq!(r.value, Some(0.3));
    assert_eq!(r.regime, Regime::SnrZero);
    let r = limit_optimal_error(&q(Model::Pooled, 2.0, 0.5)).unwrap();
    assert!((r.value.unwrap() - 0.158_655_253_931_457_05).abs() < 1e-12);
    assert_eq!(limit_optimal_error(&q(Model::Pooled, f64::INFINITY, 0.5)).unwrap().value, Some(0.0));
    let r = limit_optimal_error(&q(Model::Vectorized, 1.0, 0.4)).unwrap();
    assert!(r.value.is_none() && r.strictly_positive);
    assert_eq!(limit_optimal_error(&q(Model::Vectorized, 0.0, 0.4)).unwrap().value, Some(0.4));
    assert_eq!(limit_optimal_error(&q(Model::ApproxAttention, f64::INFINITY, 0.4)).unwrap().value, Some(0.0));
    let mut a = q(Model::Attention, 0.0, 0.4);
    a.attention_ratio = Some(1.2);
    assert_eq!(limit_optimal_error(&a).unwrap().value, Some(0.0));
    a.attention_ratio = Some(0.8);
    assert_eq!(limit_optimal_error(&a).unwrap().value, None);
    assert!(limit_optimal_error(&q(Model::Pooled, -1.0, 0.4)).is_err());
}

#[test]
fn finite_length_pooled_optimum_converges() {
    let c = TaskConfig::new(100, 1, 20.0, 0.5, 4).unwrap();
    let (b, v) = finite_l_pooled_optimum(&c).unwrap();
    assert!((v - normal_cdf(-1.0)).abs() < 1e-3);
    assert!((b - 1.0).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vectorized_capacity_is_l_times_pooled(l in 2usize..12, rfrac in 0.0f64..1.0, th in 0.0f64..4.0, pi in 0.05f64..0.95) {
        let r = 1 + ((l - 1) as f64 * rfrac) as usize;
        let c = cfg(l, r, th, pi);
        let p = capacity(Model::Pooled, &c, None).unwrap();
        let v = capacity(Model::Vectorized, &c, None).unwrap();
        prop_assert!((v.alpha_star - l as f64 * p.alpha_star).abs() <= 1e-6 * v.alpha_star);
    }

    #[test]
    fn pooled_and_vectorized_residuals_agree(x in 0.2f64..5.0, pi in 0.05f64..0.95) {
        let c = TaskConfig::new(4, 1, 2.0 * x, pi, 4).unwrap();
        let p = ridgeless_quadratic(Model::Pooled, &c, None).unwrap();
        let v = ridgeless_quadratic(Model::Vectorized, &c, None).unwrap();
        prop_assert!((p.e_test_inf - v.e_test_inf).abs() < 1e-12);
        prop_assert!((v.correction_coeff - 4.0 * p.correction_coeff).abs() < 1e-9 * p.correction_coeff.abs().max(1.0));
    }

    #[test]
    fn mu3_radicand_never_negative(nu in 0.0f64..3.0, m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, g in -0.99f64..0.99) {
        let c = cfg(3, 1, 1.0, 0.5);
        let mut lw = pooled_law(&c).unwrap();
        lw.kind = LawKind::Sampled;
        lw.params.gamma = g;
        let m3 = lw.mu3(nu, m1, m2).unwrap();
        prop_assert!(m3 >= nu - 1e-12);
    }
}
