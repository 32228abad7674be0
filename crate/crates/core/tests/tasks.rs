use foldcore::diffstep::{fd_check, simplex_project, DiffStepExt, SmoothObjective};
use foldcore::foldengine::{extract_phi, spectral_radius, BackwardMode, FixedPoint};
use foldcore::linalg::DenseMatrix;
use foldcore::solvers::{pgd_solve, pgd_step, NlpProblem, StepsizePolicy};
use foldcore::tasks::{
    export_csv, import_csv, make_bilinear_with, make_denoising, make_portfolio_with, make_topk, regret, topk_embedding,
    BilinearSpec, EntropyTopK, LayerOptions, PortfolioNlp, TaskInstance, TaskKind,
};
use proptest::prelude::*;
use std::sync::Arc;

#[test]
fn topk_symmetric_and_dominant_cases() {
    let t = EntropyTopK::new(4, 2).unwrap();
    let (x, _) = t.solve_exact(&[0.0; 4]).unwrap();
    for v in x {
        assert!((v - 0.5).abs() < 1e-14);
    }
    let (x, _) = t.solve_exact(&[40.0, 0.0, 0.0, 0.0]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-12);
}

#[test]
fn topk_exact_matches_projected_gradient() {
    let t = EntropyTopK::new(10, 3).unwrap();
    let proj = simplex_project(10, 3.0).unwrap();
    for seed in 0..5 {
        let c: Vec<f64> = (0..10).map(|i| ((i * 7 + seed * 3) % 11) as f64 * 0.3 - 1.0).collect();
        let (x, _) = t.solve_exact(&c).unwrap();
        assert!((x.iter().sum::<f64>() - 3.0).abs() < 1e-10);
        let x0 = vec![0.3; 10];
        let out = pgd_solve(&t, &proj, &c, &x0, StepsizePolicy::Constant(0.05), 1e-14, 200_000, None).unwrap();
        for i in 0..10 {
            assert!((out.fixed_point.x_star[i] - x[i]).abs() < 1e-8, "{:?} vs {x:?}", out.fixed_point.x_star);
        }
    }
}

#[test]
fn topk_kkt_state_is_sqp_fixed_point() {
    let t = EntropyTopK::new(6, 2).unwrap();
    let c = vec![2.5, 0.1, -0.3, 1.9, 0.0, 0.4];
    let state = t.kkt_state(&c).unwrap();
    let step = foldcore::solvers::SqpStep::new(Arc::new(t), 1.0).unwrap();
    let fp = FixedPoint::measure(&step, state, c.clone(), 0).unwrap();
    assert!(fp.residual < 1e-8, "{}", fp.residual);
}

#[test]
fn topk_nlp_vjp_matches_finite_differences() {
    let t = EntropyTopK::new(5, 2).unwrap();
    let step = foldcore::solvers::SqpStep::new(Arc::new(t), 1.0).unwrap();
    let c = vec![0.3, -0.2, 0.5, 0.1, 0.0];
    let mut state = t.kkt_state(&c).unwrap();
    for (i, v) in state.iter_mut().take(5).enumerate() {
        *v += 1e-3 * (i as f64 - 2.0);
    }
    let rep = fd_check(&step, &state, &c, 1e-7, 4, 1).unwrap();
    assert!(rep.max_rel_err_state < 1e-5 && rep.max_rel_err_param < 1e-5, "{rep:?}");
}

#[test]
fn topk_spectral_radius_grows_with_alpha() {
    let t = EntropyTopK::new(10, 3).unwrap();
    let c = topk_embedding(&t, 1);
    let (x, nu) = t.solve_exact(&c).unwrap();
    assert!(nu.abs() < 1e-12);
    let mut last = 0.0;
    for alpha in [0.4, 0.5, 0.55, 0.6, 0.7] {
        let step = pgd_step(Arc::new(t), alpha, simplex_project(10, 3.0).unwrap().shared()).unwrap();
        let fp = FixedPoint::measure(&step, x.clone(), c.clone(), 0).unwrap();
        let rho = spectral_radius(&step, &fp, 1e-12, 100_000, 3).unwrap().value;
        let phi = extract_phi(&step, &fp).unwrap();
        let dense = nalgebra::DMatrix::from_row_slice(10, 10, phi.as_slice());
        let eig = dense.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((rho - eig).abs() < 1e-6, "alpha={alpha}: {rho} vs {eig}");
        assert!(rho > last);
        last = rho;
    }
}

#[test]
fn denoising_basics() {
    let task = make_denoising(20, 8, 0.0, 3).unwrap();
    let TaskKind::Denoising(spec) = task.kind else { panic!() };
    let d = spec.differencing();
    assert_eq!(d[(0, 0)], 1.0);
    assert_eq!(d[(0, 1)], -1.0);
    // constant signal: x* = d
    let flat = vec![0.4; 8];
    let mut c = flat.clone();
    c.extend_from_slice(d.as_slice());
    let x = task.decision(&c).unwrap();
    for v in x {
        assert!((v - 0.4).abs() < 1e-10);
    }
    // zero noise: inputs equal targets
    for i in 0..task.data.len() {
        assert_eq!(task.data.features[i], task.data.params[i]);
    }
}

#[test]
fn denoiser_never_worse_than_noop() {
    let task = make_denoising(10, 12, 0.3, 4).unwrap();
    let TaskKind::Denoising(spec) = task.kind else { panic!() };
    for i in 0..10 {
        let mut c = task.data.features[i].clone();
        c.extend_from_slice(spec.differencing().as_slice());
        let x = task.decision(&c).unwrap();
        assert!(task.objective(&x, &c) <= task.objective(&task.data.features[i], &c) + 1e-12);
    }
}

#[test]
fn portfolio_lp_limit_and_zero_regret() {
    let nlp = PortfolioNlp {
        v: DenseMatrix::from_diag(&[0.1, 0.2, 0.3]),
        gamma: 10.0,
    };
    let task = TaskInstance::new(
        "p",
        TaskKind::Portfolio(nlp),
        foldcore::tasks::Dataset::new(vec![vec![0.0; 5]], vec![vec![0.2, 0.9, 0.5]]).unwrap(),
        0,
    )
    .unwrap();
    let x = task.decision(&[0.2, 0.9, 0.5]).unwrap();
    assert!((x[1] - 1.0).abs() < 1e-8, "{x:?}");
    let task = make_portfolio_with(5, 2, 20, 9).unwrap();
    for i in 0..5 {
        let r = regret(&task, &task.data.params[i], &task.data.params[i]).unwrap();
        assert!(r.abs() < 1e-10);
    }
}

#[test]
fn portfolio_regret_matches_enumeration() {
    // n = 3 with active risk: enumerate supports and solve the KKT system on each
    let v = DenseMatrix::from_row_major(3, 3, vec![0.2, 0.05, 0.0, 0.05, 0.1, 0.02, 0.0, 0.02, 0.3]).unwrap();
    let nlp = PortfolioNlp { v: v.clone(), gamma: 0.09 };
    let c_bar = vec![1.0, 0.6, 0.9];
    let c_hat = vec![0.2, 1.0, 0.1];
    let task = TaskInstance::new(
        "p",
        TaskKind::Portfolio(nlp.clone()),
        foldcore::tasks::Dataset::new(vec![vec![0.0; 5]], vec![c_bar.clone()]).unwrap(),
        0,
    )
    .unwrap();
    let brute = |c: &[f64]| -> Vec<f64> {
        // fine search over the simplex, then keep the best feasible
        let mut best = (f64::NEG_INFINITY, vec![]);
        let steps = 600;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let x = vec![i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                if nlp.risk(&x) <= nlp.gamma {
                    let val = c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                    if val > best.0 {
                        best = (val, x);
                    }
                }
            }
        }
        best.1
    };
    let r = regret(&task, &c_hat, &c_bar).unwrap();
    let xb = brute(&c_bar);
    let xh = brute(&c_hat);
    let rb = nlp.objective(&xh, &c_bar) - nlp.objective(&xb, &c_bar);
    assert!(r >= -1e-10);
    assert!((r - rb).abs() < 5e-3, "{r} vs grid {rb}");
}

#[test]
fn bilinear_separable_limit_and_grid() {
    let spec = BilinearSpec::new(DenseMatrix::zeros(4, 4), 1.0, 2.0).unwrap();
    let cd = vec![0.1, 0.7, 0.3, 0.2, 0.5, -0.1, 0.4, 0.9];
    let z = spec.solve_exact(&cd).unwrap();
    assert_eq!(z, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    // n = 2, p = q = 1: grid search over (x₁, y₁)
    let q = DenseMatrix::from_row_major(2, 2, vec![1.0, -2.0, -1.5, 0.5]).unwrap();
    let spec = BilinearSpec::new(q, 1.0, 1.0).unwrap();
    let cd = vec![0.2, -0.1, 0.3, 0.0];
    let z = spec.solve_exact(&cd).unwrap();
    let fz = -spec.value(&z, &cd);
    let mut best = f64::NEG_INFINITY;
    for i in 0..=1000 {
        for j in 0..=1000 {
            let (a, b) = (i as f64 / 1000.0, j as f64 / 1000.0);
            best = best.max(-spec.value(&[a, 1.0 - a, b, 1.0 - b], &cd));
        }
    }
    assert!((fz - best).abs() <= 1e-3);
}

#[test]
fn bilinear_multistart_layer_is_near_exact() {
    let tasks = make_bilinear_with(2, 1, 20, 5).unwrap();
    let task = &tasks[0];
    let layer = task.layer(&LayerOptions { alpha: 0.1, starts: 16, ..LayerOptions::default() }).unwrap();
    for i in 0..10 {
        let c = &task.data.params[i];
        let x = layer.forward(c).unwrap();
        let exact = task.decision(c).unwrap();
        assert!(task.objective(&x, c) - task.objective(&exact, c) <= 1e-3);
    }
}

#[test]
fn datasets_roundtrip_and_reproduce() {
    let a = make_bilinear_with(3, 2, 30, 11).unwrap();
    let b = make_bilinear_with(3, 2, 30, 11).unwrap();
    assert_eq!(export_csv(&a[1]), export_csv(&b[1]));
    let text = export_csv(&a[0]);
    let back = import_csv(&text, a[0].kind.clone()).unwrap();
    assert_eq!(back, a[0]);
    let t = make_topk(10, 3).unwrap();
    assert_eq!(import_csv(&export_csv(&t), t.kind.clone()).unwrap(), t);
}

#[test]
fn layers_build_for_every_task() {
    let topk = make_topk(10, 3).unwrap();
    let den = make_denoising(5, 6, 0.2, 1).unwrap();
    let port = make_portfolio_with(4, 1, 5, 2).unwrap();
    for task in [&topk, &den, &port] {
        let layer = task.layer(&LayerOptions::default()).unwrap();
        let c = task.layer_input(0, &initial_prediction(task, 0));
        let x = layer.forward(&c).unwrap();
        assert_eq!(x.len(), task.decision_dim());
        let g = vec![1.0; x.len()];
        for mode in [BackwardMode::Jacobian, BackwardMode::Gmres] {
            let grad = layer.backward_with(&c, &g, mode).unwrap().grad_c;
            assert!(grad.iter().all(|v| v.is_finite()));
        }
    }
}

fn initial_prediction(task: &TaskInstance, i: usize) -> Vec<f64> {
    match &task.kind {
        TaskKind::Denoising(d) => d.differencing().as_slice().to_vec(),
        _ => task.data.params[i].clone(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_output_feasible(c in prop::collection::vec(-3.0f64..3.0, 8)) {
        let t = EntropyTopK::new(8, 3).unwrap();
        let (x, _) = t.solve_exact(&c).unwrap();
        prop_assert!((x.iter().sum::<f64>() - 3.0).abs() <= 1e-8);
        for v in &x {
            prop_assert!(*v > 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn convex_regret_nonnegative(c in prop::collection::vec(-2.0f64..2.0, 6), seed in 0u64..4) {
        let task = make_topk(6, 2).unwrap();
        let c_bar = &task.data.params[seed as usize];
        prop_assert!(regret(&task, &c, c_bar).unwrap() >= -1e-8);
    }

    #[test]
    fn entropy_vjps_match_fd(c in prop::collection::vec(-1.0f64..1.0, 5)) {
        let t = EntropyTopK::new(5, 2).unwrap();
        let x = vec![0.3, 0.5, 0.2, 0.6, 0.4];
        let step = foldcore::diffstep::grad_step(Arc::new(t), 0.3).unwrap();
        let rep = fd_check(&step, &x, &c, 1e-6, 3, 2).unwrap();
        prop_assert!(rep.max_rel_err_state < 1e-6 && rep.max_rel_err_param < 1e-6);
    }
}
