use super::*;
use crate::linalg::Mat;
use crate::task::TaskSpec;

fn problem(d: usize, k: usize, m: usize, emb: Embedding, seed: u64) -> StylizedProblem {
    let cfg = StylizedConfig {
        d,
        task: TaskSpec {
            keys: k,
            anchors: m,
            train_pair_fraction: 0.75,
            seed,
        },
        embedding: emb,
        gamma: 0.5,
    };
    StylizedProblem::new(&cfg).unwrap()
}

fn grad_fd_check(p: &StylizedProblem, params: &StylizedParams, lambda: f64) -> f64 {
    let (_, g) = stylized_loss_grad(p, params, lambda).unwrap();
    let analytic = g.flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let n = analytic.len();
    // Every coordinate of W₁ and W₂ plus a stride through the lookups.
    let coords: Vec<usize> = (0..n).filter(|c| *c >= n - 2 * p.d * p.d || c % 7 == 0).collect();
    for c in coords {
        let mut plus = params.clone();
        *plus.flat_mut()[c] += h;
        let mut minus = params.clone();
        *minus.flat_mut()[c] -= h;
        let num = (stylized_loss(p, &plus, lambda).unwrap() - stylized_loss(p, &minus, lambda).unwrap()) / (2.0 * h);
        worst = worst.max(crate::gradcheck::relative_error(analytic[c], num));
    }
    worst
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let p = problem(6, 4, 3, Embedding::UnitNormRandom, 3);
    let params = StylizedParams::init(&p, 0.7, 5);
    for lambda in [0.0, 0.3] {
        let e = grad_fd_check(&p, &params, lambda);
        assert!(e < 1e-6, "λ = {lambda}: worst relative error {e:.2e}");
    }
}

#[test]
fn forward_is_sum_of_paths_and_uses_coupling() {
    let p = problem(5, 4, 3, Embedding::UnitNormRandom, 1);
    let params = StylizedParams::init(&p, 1.0, 2);
    let (i, j, k) = (2, 0, 3);
    let f = stylized_forward(&p, &params, k, i, j);
    let (a, b) = forward_paths(&p, &params, k, i, j);
    for n in 0..p.d {
        assert!((f[n] - a[n] - b[n]).abs() < 1e-15);
    }
    // Zero W₂ silences the reasoning path.
    let mut z = params.clone();
    z.w2.data.fill(0.0);
    assert_eq!(coupling(&p, &z, i, j), 0.0);
    assert!(forward_paths(&p, &z, k, i, j).1.iter().all(|x| *x == 0.0));
}

#[test]
fn perfect_lookup_has_zero_data_loss() {
    // With orthonormal keys the exact memorizer is M = Yᵀ E.
    let p = problem(6, 6, 3, Embedding::OrthonormalKeys, 4);
    let mut params = StylizedParams::zeros(&p);
    for &(i, j) in &p.train_pairs {
        let y = p.targets(i, j);
        params.m[p.pair_index(i, j)] = y.transpose().matmul(&p.keys);
    }
    let (loss, g) = stylized_loss_grad(&p, &params, 0.0).unwrap();
    assert!(loss < 1e-25, "{loss}");
    assert!(g.flat().iter().all(|x| x.abs() < 1e-12));
    let (m, r) = order_params(&p, &params);
    assert!((m - (p.n_keys as f64).sqrt()).abs() < 1e-12);
    assert_eq!(r, 0.0);
}

#[test]
fn gram_must_be_positive_definite() {
    let cfg = |d, k, emb| StylizedConfig {
        d,
        task: TaskSpec {
            keys: k,
            anchors: 3,
            train_pair_fraction: 0.75,
            seed: 0,
        },
        embedding: emb,
        gamma: 0.5,
    };
    for emb in [Embedding::UnitNormRandom, Embedding::OrthonormalKeys] {
        assert!(matches!(
            StylizedProblem::new(&cfg(4, 6, emb)),
            Err(crate::Error::DegenerateGram(_))
        ));
    }
    let keys = Mat::from_vec(
        4,
        4,
        vec![
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ],
    );
    let anchors = Mat::identity(4).scale(1.0);
    let anchors = Mat::from_vec(3, 4, anchors.data[..12].to_vec());
    let custom = Embedding::Custom { keys, anchors };
    assert!(matches!(
        StylizedProblem::new(&cfg(4, 4, custom)),
        Err(crate::Error::DegenerateGram(_))
    ));
    let p = StylizedProblem::new(&cfg(8, 6, Embedding::OrthonormalKeys)).unwrap();
    assert!((p.sigma_e - 1.0).abs() < 1e-12 && (p.sigma_e_max - 1.0).abs() < 1e-12);
}

#[test]
fn memorization_hessian_spectrum() {
    let p = problem(4, 3, 3, Embedding::UnitNormRandom, 2);
    let eig = memorization_hessian(&p).unwrap();
    assert_eq!(eig.len(), 12);
    let ge = crate::linalg::symmetric_eigenvalues(&p.gram_e);
    for (n, e) in eig.iter().enumerate() {
        assert!((e - ge[n / 4]).abs() < 1e-12, "{eig:?} vs {ge:?}");
    }
    // The parameter-space Hessian carries the same non-zero spectrum d times
    // plus d·(d − K) zeros from directions the keys never excite.
    let h = memorization_parameter_hessian(&p, 0).unwrap();
    let mut hp = crate::linalg::symmetric_eigenvalues(&h);
    assert_eq!(hp.len(), 16);
    let zeros = hp.iter().filter(|x| x.abs() < 1e-10).count();
    assert_eq!(zeros, 4);
    hp.retain(|x| x.abs() >= 1e-10);
    for (a, b) in hp.iter().zip(&eig) {
        assert!((a - b).abs() < 1e-10);
    }
    let big = problem(17, 3, 3, Embedding::UnitNormRandom, 2);
    assert!(matches!(
        memorization_hessian(&big),
        Err(crate::Error::DimensionGuard(_))
    ));
}

#[test]
fn fit_rate_recovers_synthetic_exponential() {
    let t: Vec<f64> = (0..=400).map(|n| n as f64 * 0.1).collect();
    let x: Vec<f64> = t.iter().map(|t| 1.0 - (-0.3 * t).exp()).collect();
    let mu = fit_rate(&t, &x, FitWindow::default()).unwrap();
    assert!((mu - 0.3).abs() < 0.003, "{mu}");
    let down: Vec<f64> = t.iter().map(|t| 2.0 + 3.0 * (-0.7 * t).exp()).collect();
    let mu = fit_rate(&t, &down, FitWindow::default()).unwrap();
    assert!((mu - 0.7).abs() < 0.007, "{mu}");
    // The early half works too for a pure exponential.
    let mu = fit_rate(&t, &x, FitWindow { lo: 0.0, hi: 0.5 }).unwrap();
    assert!((mu - 0.3).abs() < 0.003, "{mu}");
}

#[test]
fn fit_rate_rejects_bad_input() {
    use crate::Error::FitFailed;
    assert!(matches!(
        fit_rate(&[0.0, 1.0], &[0.0, 1.0], FitWindow::default()),
        Err(FitFailed(_))
    ));
    assert!(matches!(
        fit_rate(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0], FitWindow::default()),
        Err(FitFailed(_))
    ));
    let t: Vec<f64> = (0..100).map(|n| n as f64).collect();
    let wiggle: Vec<f64> = t
        .iter()
        .map(|t| 1.0 - (-0.1 * t).exp() + 0.05 * (t * 1.7).sin())
        .collect();
    assert!(matches!(fit_rate(&t, &wiggle, FitWindow::default()), Err(FitFailed(_))));
    assert!(fit_rate(&t, &t, FitWindow { lo: 0.6, hi: 0.5 }).is_err());
}

#[test]
fn coupling_moment_matches_closed_form() {
    let p = problem(8, 8, 4, Embedding::UnitNormRandom, 0);
    assert!((coupling_constant(&p) - 1.0 / 8.0).abs() < 1e-12);
    let est = coupling_moment_mc(&p, 0.5, 20_000, 9).unwrap();
    assert!((est.expected - 0.03125).abs() < 1e-12);
    assert!(est.z_score() < 3.0, "{est:?}");
}

#[test]
fn half_times_and_window_closed_form() {
    let (tm, tr) = half_times_from(0.27, 0.016, 0.5);
    assert!((tm - std::f64::consts::LN_2 / 0.27).abs() < 1e-12);
    assert!((tr - 640.0).abs() / 640.0 < 0.01, "{tr}");
    let w = predict_window_from(0.27, 0.5, 0.016, 0.5, 1.0, 0.5, None).unwrap();
    assert!((w.t2 - tr).abs() < 1e-9 && !w.t2_clamped);
    let w = predict_window_from(0.27, 0.5, 0.016, 0.5, 1.0, 0.5, Some(100.0)).unwrap();
    assert!(w.t2_clamped && w.t2 == 100.0 && w.t2_raw > 100.0);
    for delta in [0.0, 0.6, -1.0] {
        assert!(predict_window_from(0.27, 0.5, 0.016, 0.5, 1.0, delta, None).is_err());
    }
    // Halving η doubles both ends.
    let a = predict_window_from(0.27, 0.5, 0.016, 0.5, 1e-3, 0.1, None).unwrap();
    let b = predict_window_from(0.27, 0.5, 0.016, 0.5, 5e-4, 0.1, None).unwrap();
    assert!((b.t1 / a.t1 - 2.0).abs() < 1e-12 && (b.t2 / a.t2 - 2.0).abs() < 1e-12);
}

#[test]
fn flow_is_deterministic_and_samples_endpoints() {
    let p = problem(6, 6, 3, Embedding::OrthonormalKeys, 1);
    let opts = FlowOptions {
        record_every: 1.0,
        ..FlowOptions::default()
    };
    let a = integrate_flow(&p, 0.3, &FlowSchedule::None, 0.05, 10.0, 4, &opts).unwrap();
    let b = integrate_flow(&p, 0.3, &FlowSchedule::None, 0.05, 10.0, 4, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.times.first(), Some(&0.0));
    assert!((a.times.last().unwrap() - 10.0).abs() < 1e-9);
    assert_eq!(a.times.len(), 11);
    assert!(!a.truncated);
    // Loss is non-increasing under plain gradient flow with a small step.
    assert!(a.loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn frozen_groups_do_not_move() {
    let p = problem(6, 6, 3, Embedding::OrthonormalKeys, 1);
    let init = flow_init(&p, 0.5, 2, Groups::NONE);
    let opts = FlowOptions {
        trainable: Groups::REASONING,
        ..FlowOptions::default()
    };
    let (_, end) = integrate_flow_from(&p, &init, &FlowSchedule::Constant { lambda: 0.1 }, 0.05, 5.0, &opts).unwrap();
    assert_eq!(end.m, init.m);
    assert_eq!(end.w2, init.w2);
    assert_ne!(end.w1, init.w1);
}

#[test]
fn blow_up_truncates_with_flag() {
    // A hand-built state whose composition channel sits far past the blow-up
    // level stops at the first sample.
    let p = problem(6, 6, 3, Embedding::OrthonormalKeys, 1);
    let mut init = flow_init(&p, 0.5, 2, Groups::NONE);
    init.w1 = init.w1.scale(1e4);
    init.w2 = init.w2.scale(1e4);
    let opts = FlowOptions {
        trainable: Groups::NONE,
        ..FlowOptions::default()
    };
    let (t, _) = integrate_flow_from(&p, &init, &FlowSchedule::None, 0.05, 5.0, &opts).unwrap();
    assert!(t.truncated);
    assert_eq!(t.times.len(), 1);
}

#[test]
fn memorization_rate_is_smallest_key_eigenvalue() {
    for (emb, k) in [(Embedding::OrthonormalKeys, 8), (Embedding::UnitNormRandom, 4)] {
        let p = problem(8, k, 4, emb, 2);
        let r = measure_memorization_rate(&p, 0.3, &[0, 1], FitWindow::default()).unwrap();
        assert!(r.rel_error() < 0.1, "{r:?} σ_e = {}", p.sigma_e);
    }
}

#[test]
fn reasoning_rate_tracks_each_seed_coupling() {
    let p = problem(8, 8, 4, Embedding::OrthonormalKeys, 2);
    let r = measure_reasoning_rate(&p, 0.5, &[3, 4, 5], FitWindow::default()).unwrap();
    for (s, mu) in [3u64, 4, 5].iter().zip(&r.per_seed) {
        let init = flow_init(&p, 0.5, *s, Groups::NONE);
        let sum: f64 = p
            .train_pairs
            .iter()
            .map(|&(i, j)| coupling(&p, &init, i, j).powi(2))
            .sum();
        let expect = sum * p.sigma_e;
        assert!((mu - expect).abs() / expect < 0.1, "seed {s}: {mu} vs {expect}");
    }
}

#[test]
fn window_before_memorization_is_inert() {
    let p = problem(8, 8, 4, Embedding::OrthonormalKeys, 0);
    let (t1, _) = half_times(&p, 0.3);
    let init = flow_init(&p, 0.3, 1, Groups::NONE);
    let sched = FlowSchedule::Windowed {
        lambda: 0.05,
        start: 0.0,
        end: 0.5 * t1,
    };
    let e = window_effect(&p, &init, &sched, 0.05, 60.0, &FlowOptions::default()).unwrap();
    assert!(e.rel_m_change < 0.05, "{e:?}");
}

#[test]
fn window_after_reasoning_half_time_leaves_memorizer() {
    let p = problem(8, 8, 4, Embedding::OrthonormalKeys, 0);
    let gamma = 0.3;
    let opts = FlowOptions::default();
    let init = flow_init(&p, gamma, 1, Groups::NONE);
    let (_, converged) = integrate_flow_from(&p, &init, &FlowSchedule::None, 0.05, 40.0, &opts).unwrap();
    let (_, tr) = flow_window(&p, gamma, 0.5, f64::INFINITY).unwrap();
    let sched = FlowSchedule::Windowed {
        lambda: 0.05,
        start: tr,
        end: tr + 10.0,
    };
    let e = window_effect(&p, &converged, &sched, 0.05, tr + 40.0, &opts).unwrap();
    assert!(e.rel_m_change < 0.05, "{e:?}");
}

#[test]
fn window_inside_critical_period_raises_reasoning_mass() {
    let p = problem(8, 8, 4, Embedding::OrthonormalKeys, 0);
    let init = flow_init(&p, 0.1, 1, Groups::NONE);
    let sched = FlowSchedule::Windowed {
        lambda: 0.05,
        start: 0.7,
        end: 40.0,
    };
    let e = window_effect(&p, &init, &sched, 0.05, 80.0, &FlowOptions::default()).unwrap();
    assert!(e.r_final > 1.5 * e.r_baseline, "{e:?}");
    assert!(e.m_final < e.m_baseline, "{e:?}");
}

#[test]
fn basin_grows_with_gamma_and_horizon() {
    let p = problem(8, 8, 4, Embedding::OrthonormalKeys, 0);
    let gammas = vec![0.2, 0.4, 0.6, 0.8, 1.0];
    let t_mid = 2.0 * std::f64::consts::LN_2 / flow_rates(&p, 0.6).1;
    let mut cfg = BasinConfig::new(gammas, t_mid, 10);
    let a = basin_mc(&p, &cfg).unwrap();
    cfg.t_end *= 2.0;
    let b = basin_mc(&p, &cfg).unwrap();
    let fa: Vec<f64> = a.iter().map(|x| x.fraction).collect();
    let fb: Vec<f64> = b.iter().map(|x| x.fraction).collect();
    println!("T {t_mid:.2}: {fa:?}\nT {:.2}: {fb:?}", 2.0 * t_mid);
    assert!(fa.windows(2).filter(|w| w[1] < w[0]).count() <= 1);
    assert!(fa.iter().zip(&fb).all(|(x, y)| y >= x));
    assert!(fa[0] <= 0.5 && *fa.last().unwrap() > fa[0]);
}
