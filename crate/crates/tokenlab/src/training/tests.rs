use super::*;
use crate::data_model::sample_batch;
use crate::losses::c_loss;

fn sched(eta: f64) -> StepSchedule {
    StepSchedule {
        eta_b: eta,
        eta_w: eta,
        eta_q: eta,
        beta: 1.0,
        lambda: 0.1,
        alpha0: 1.0,
        alpha1: 1.0,
    }
}

fn batch_of(l: usize, d: usize, items: Vec<(Vec<f64>, i8)>) -> Batch {
    Batch {
        l,
        d,
        samples: items.into_iter().map(|(x, y)| Sample { x, y, v: None }).collect(),
    }
}

#[test]
fn first_step_examples() {
    let s = sched(0.7);
    let b = batch_of(3, 2, vec![(vec![0.0; 6], -1); 4]);
    let (w, _) = stage12_first_step(&b, &s, LossSpec::LOGISTIC).unwrap();
    assert!(w.iter().all(|&v| v == 0.0));

    // one positive, no noise, signal on R = 2 of L = 3 tokens
    let theta = 1.5;
    let x = vec![theta, 0.0, theta, 0.0, 0.0, 0.0];
    let b = batch_of(3, 2, vec![(x, 1)]);
    for loss in [LossSpec::LOGISTIC, LossSpec::QUADRATIC] {
        let (w, _) = stage12_first_step(&b, &s, loss).unwrap();
        let expect = 0.7 * c_loss(loss) * theta * 2.0 / 3.0;
        assert!((w[0] - expect).abs() < 1e-15 && w[1] == 0.0);
    }

    let mut s1 = s;
    s1.eta_b = 1.0;
    let b = batch_of(1, 1, vec![(vec![0.3], 1), (vec![0.1], 1), (vec![-2.0], -1), (vec![5.0], -1)]);
    let (_, b1) = stage12_first_step(&b, &s1, LossSpec::LOGISTIC).unwrap();
    assert_eq!(b1, 0.0);
    let empty = batch_of(1, 1, vec![]);
    assert!(stage12_first_step(&empty, &s1, LossSpec::LOGISTIC).is_err());
}

#[test]
fn second_step_examples() {
    let b = batch_of(2, 2, vec![(vec![1.0, 0.0, 0.0, 0.0], 1)]);
    let mut s = sched(1.0);
    s.eta_q = 2.0; // η_q β / (n₀ L) = 1
    let q = stage3_second_step(&b, &[1.0, 0.0], 0.0, &s, LossSpec::QUADRATIC).unwrap();
    assert!((q[0] - 0.25).abs() < 1e-15 && q[1] == 0.0);
    let q = stage3_second_step(&b, &[0.0, 0.0], 0.3, &s, LossSpec::QUADRATIC).unwrap();
    assert!(q.iter().all(|&v| v == 0.0));
    s.beta = 0.0;
    let q = stage3_second_step(&b, &[1.0, 0.0], 0.0, &s, LossSpec::QUADRATIC).unwrap();
    assert!(q.iter().all(|&v| v == 0.0));
    assert!(stage3_second_step(&b, &[1.0], 0.0, &s, LossSpec::QUADRATIC).is_err());
}

#[test]
fn steps_match_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = TaskConfig::new(4, 2, 1.3, 0.4, 5).unwrap();
    let samples = sample_batch(&c, 32, &mut rng).unwrap();
    let b = Batch { l: 4, d: 5, samples };
    let s = StepSchedule { eta_b: 0.3, eta_w: 0.8, eta_q: 1.1, beta: 0.7, ..sched(1.0) };
    for loss in [LossSpec::LOGISTIC, LossSpec::QUADRATIC] {
        let (w1, b1) = stage12_first_step(&b, &s, loss).unwrap();
        let q2 = stage3_second_step(&b, &w1, b1, &s, loss).unwrap();
        let (n, l, d) = (32.0, 4usize, 5usize);
        let mut wr = vec![0.0; d];
        let mut br = 0.0;
        for smp in &b.samples {
            let h = loss_eval(loss, 0.0, smp.label()).d1;
            br -= s.eta_b * h / n;
            for j in 0..d {
                for k in 0..l {
                    wr[j] -= s.eta_w * h * smp.x[k * d + j] / (n * l as f64);
                }
            }
        }
        let mut qr = vec![0.0; d];
        for smp in &b.samples {
            let x = |k: usize, j: usize| smp.x[k * d + j];
            let mut m = b1;
            for k in 0..l {
                for j in 0..d {
                    m += x(k, j) * wr[j] / l as f64;
                }
            }
            let h = loss_eval(loss, m, smp.label()).d1;
            // Xw, then (I − 11ᵀ/L) Xw, then Xᵀ(·)
            let xw: Vec<f64> = (0..l).map(|k| (0..d).map(|j| x(k, j) * wr[j]).sum()).collect();
            let mean: f64 = xw.iter().sum::<f64>() / l as f64;
            for j in 0..d {
                for k in 0..l {
                    qr[j] -= s.eta_q * s.beta * h * x(k, j) * (xw[k] - mean) / (n * l as f64);
                }
            }
        }
        assert!((b1 - br).abs() < 1e-12);
        for j in 0..d {
            assert!((w1[j] - wr[j]).abs() < 1e-12);
            assert!((q2[j] - qr[j]).abs() < 1e-12);
        }
    }
}

/// Dense Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn random_design(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.sample(rand_distr::StandardNormal)).collect()).collect();
    let y = rows.iter().map(|r| if r[0] + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal) > 0.2 { 1.0 } else { -1.0 }).collect();
    (rows, y)
}

#[test]
fn quadratic_matches_normal_equations() {
    let (rows, y) = random_design(60, 8, 1);
    let design = Design::from_rows(&rows, y.clone()).unwrap();
    let lambda = 0.05;
    let r = solve_erm(&design, lambda, LossSpec::QUADRATIC, ErmOptions::default()).unwrap();
    assert!(r.converged);
    let m = 9;
    let n = rows.len() as f64;
    let aug: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
    let mut h = vec![vec![0.0; m]; m];
    let mut g = vec![0.0; m];
    for (a, &yi) in aug.iter().zip(&y) {
        for i in 0..m {
            g[i] += a[i] * yi / n;
            for j in 0..m {
                h[i][j] += a[i] * a[j] / n;
            }
        }
    }
    for (i, row) in h.iter_mut().enumerate().take(m - 1) {
        row[i] += lambda;
    }
    let x = gauss_solve(h, g);
    for j in 0..8 {
        assert!((r.w[j] - x[j]).abs() < 1e-8);
    }
    assert!((r.b - x[8]).abs() < 1e-8);
    assert!(r.iterations <= 2);
}

#[test]
fn cg_path_agrees_with_direct() {
    let (rows, y) = random_design(80, 30, 2);
    let design = Design::from_rows(&rows, y).unwrap();
    for loss in [LossSpec::QUADRATIC, LossSpec::LOGISTIC] {
        let direct = solve_erm(&design, 0.01, loss, ErmOptions::default()).unwrap();
        let cg = solve_erm(&design, 0.01, loss, ErmOptions { direct_max_dim: 5, ..Default::default() }).unwrap();
        assert!(direct.converged && cg.converged);
        for (a, b) in direct.w.iter().zip(&cg.w) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn strong_ridge_shrinks_weights() {
    let (rows, y) = random_design(50, 5, 3);
    let frac = y.iter().filter(|&&v| v > 0.0).count() as f64 / y.len() as f64;
    let design = Design::from_rows(&rows, y.clone()).unwrap();
    let r = solve_erm(&design, 1e6, LossSpec::QUADRATIC, ErmOptions::default()).unwrap();
    assert!(r.w.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-3);
    assert!((r.b - (2.0 * frac - 1.0)).abs() < 1e-3);
    let r = solve_erm(&design, 1e6, LossSpec::LOGISTIC, ErmOptions::default()).unwrap();
    assert!(r.w.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-3);
    assert!((r.b - (frac / (1.0 - frac)).ln()).abs() < 1e-3);
}

#[test]
fn logistic_descent_and_optimality() {
    let (rows, y) = random_design(120, 6, 4);
    let design = Design::from_rows(&rows, y).unwrap();
    let r = solve_erm(&design, 1e-3, LossSpec::LOGISTIC, ErmOptions::default()).unwrap();
    assert!(r.converged && r.grad_norm <= 1e-8);
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    let mut theta: Vec<f64> = r.w.clone();
    theta.push(r.b);
    let (_, g) = erm_objective(&design, 1e-3, LossSpec::LOGISTIC, &theta);
    let h = 1e-6;
    for j in 0..theta.len() {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += h;
        tm[j] -= h;
        let fd = (erm_objective(&design, 1e-3, LossSpec::LOGISTIC, &tp).0 - erm_objective(&design, 1e-3, LossSpec::LOGISTIC, &tm).0) / (2.0 * h);
        assert!((fd - g[j]).abs() < 1e-5);
    }
}

#[test]
fn separability_flag() {
    // fewer samples than dimensions: always separable
    let (rows, y) = random_design(10, 20, 5);
    let design = Design::from_rows(&rows, y).unwrap();
    let r = solve_erm(&design, 0.0, LossSpec::LOGISTIC, ErmOptions::default()).unwrap();
    assert!(r.separable);
    // label noise with many samples: not separable
    let (rows, y) = random_design(400, 3, 6);
    let design = Design::from_rows(&rows, y).unwrap();
    let r = solve_erm(&design, 0.0, LossSpec::LOGISTIC, ErmOptions::default()).unwrap();
    assert!(!r.separable && r.converged);
}

#[test]
fn protocol_cascade_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = TaskConfig::new(3, 1, 2.0, 0.5, 50).unwrap();
    let mut s = sched(0.5);
    s.eta_w = 0.0;
    let out = run_protocol(&c, &s, LossSpec::LOGISTIC, &mut rng, ErmOptions::default()).unwrap();
    assert_eq!(out.stats.w1_norm, 0.0);
    assert!(out.model.q().iter().all(|&v| v == 0.0));
    // q = 0 attention is the pooled model
    let pooled = run_baseline(FeatureKind::Pooled, &c, &s, LossSpec::LOGISTIC, &mut ChaCha8Rng::seed_from_u64(99), ErmOptions::default());
    assert!(pooled.is_ok());

    let d = 400;
    let c0 = TaskConfig::new(4, 1, 0.0, 0.5, d).unwrap();
    let (_, _, _, st) = run_two_steps(&c0, &sched(0.5), LossSpec::LOGISTIC, &mut rng).unwrap();
    assert!(st.s_q.abs() < 3.0 / (d as f64).sqrt());
}

#[test]
fn generated_batch_is_replayable() {
    let c = TaskConfig::new(2, 1, 1.0, 0.5, 3).unwrap();
    let g = GeneratedBatch::new(c, 5, 42).unwrap();
    let a = g.collect().unwrap();
    let b = g.collect().unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn model_json_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = TaskConfig::new(2, 1, 2.0, 0.5, 10).unwrap();
    let m = run_baseline(FeatureKind::Pooled, &c, &sched(0.1), LossSpec::QUADRATIC, &mut rng, ErmOptions::default()).unwrap();
    let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(m, back);
}
