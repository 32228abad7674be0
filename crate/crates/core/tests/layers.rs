use std::sync::Arc;

use foldcore::diffstep::{box_project, fd_check, DiffStep, DiffStepExt, QuadraticObjective, SmoothObjective};
use foldcore::foldengine::{BackwardMode, FixedPoint, Oracle};
use foldcore::linalg::DenseMatrix;
use foldcore::solvers::{
    admm_qp_solve, make_layer_ffdpg, make_layer_fpgda, make_layer_fpgdb, multistart, FileOracle, FnOracle, FoldedQpProjection,
    PgdOracle, PolytopeProjection, QpProblem, RestartableSolver, FdpgStep,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    q: DenseMatrix<f64>,
    a: DenseMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

fn instance(n: usize, m: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = f.matmul(&f.transpose()).scaled(1.0 / n as f64).add(&DenseMatrix::identity(n).scaled(0.5));
    let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(0.1..1.0));
    let xf: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let b = a.matvec(&xf);
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Instance { q, a, b, c }
}

fn qp_oracle(inst: &Instance) -> Arc<dyn Oracle<f64>> {
    let (q, a, b) = (inst.q.clone(), inst.a.clone(), inst.b.clone());
    Arc::new(FnOracle::new(1e-10, move |c: &[f64]| {
        let qp = QpProblem::new(q.clone(), c.to_vec(), a.clone(), b.clone(), true)?;
        let sol = admm_qp_solve(&qp, 1.0, 1e-13, 100_000)?;
        Ok(FixedPoint {
            x_star: sol.x,
            c: c.to_vec(),
            residual: 0.0,
            iterations: sol.iterations,
        })
    }))
}

#[test]
fn polytope_projection_jacobians_agree() {
    let inst = instance(6, 2, 4);
    let pa = PolytopeProjection::new(inst.a.clone(), inst.b.clone()).unwrap();
    let pb = FoldedQpProjection::new(inst.a.clone(), inst.b.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..2.0)).collect();
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ja = pa.vjp_state(&v, &[], &g).unwrap();
        let jb = pb.vjp_state(&v, &[], &g).unwrap();
        for i in 0..6 {
            assert!((ja[i] - jb[i]).abs() < 1e-8, "{ja:?} {jb:?}");
        }
        let rep = fd_check(&pa, &v, &[], 1e-7, 4, 3).unwrap();
        assert!(rep.max_rel_err_state < 1e-5, "{rep:?}");
    }
}

#[test]
fn fpgda_and_fpgdb_gradients_agree() {
    let inst = instance(8, 3, 7);
    let alpha = 0.5;
    let obj = Arc::new(QuadraticObjective::linear_param(inst.q.clone()));
    let la = make_layer_fpgda(
        obj.clone(),
        PolytopeProjection::new(inst.a.clone(), inst.b.clone()).unwrap().shared(),
        alpha,
        Some(qp_oracle(&inst)),
    )
    .unwrap();
    let lb = make_layer_fpgdb(obj, inst.a.clone(), inst.b.clone(), alpha, Some(qp_oracle(&inst))).unwrap();
    let g: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
    let ga = la.backward(&inst.c, &g).unwrap().grad_c;
    let gb = lb.backward(&inst.c, &g).unwrap().grad_c;
    let scale = ga.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    for i in 0..8 {
        assert!((ga[i] - gb[i]).abs() <= 1e-5 * scale, "{ga:?} vs {gb:?}");
    }
    // and both match a re-solve
    let h = 1e-6;
    for i in 0..8 {
        let run = |d: f64| {
            let mut c = inst.c.clone();
            c[i] += d;
            la.forward(&c).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = (run(h) - run(-h)) / (2.0 * h);
        assert!((fd - ga[i]).abs() < 1e-5, "i={i} fd={fd} ga={}", ga[i]);
    }
}

#[test]
fn ffdpg_at_zero_operator_is_identity() {
    let (n, m) = (5, 4);
    let layer = make_layer_ffdpg(n, m, 0.3, None).unwrap();
    let d = vec![0.3, -1.0, 2.0, 0.5, 0.0];
    let c = FdpgStep::pack(&d, &DenseMatrix::zeros(m, n));
    assert_eq!(layer.forward(&c).unwrap(), d);
    let g = vec![1.0, 2.0, -3.0, 0.5, 4.0];
    for mode in [BackwardMode::Lfpi, BackwardMode::Gmres, BackwardMode::Jacobian] {
        let grad = layer.backward_with(&c, &g, mode).unwrap().grad_c;
        assert_eq!(&grad[..n], &g[..]);
    }
}

#[test]
fn multistart_on_convex_problem_is_seed_independent() {
    let q = DenseMatrix::from_diag(&[2.0, 1.0, 3.0]);
    let obj = Arc::new(QuadraticObjective::linear_param(q));
    let proj = box_project(vec![0.0; 3], vec![1.0; 3]).unwrap().shared();
    let c = vec![-1.0, 0.5, -4.0];
    let sols: Vec<Vec<f64>> = [1, 2, 3]
        .iter()
        .map(|&seed| {
            let inner = PgdOracle::new(obj.clone(), proj.clone(), 0.3).unwrap();
            multistart(inner, 1, seed).unwrap().solve(&c).unwrap().x_star
        })
        .collect();
    for s in &sols[1..] {
        for i in 0..3 {
            assert!((s[i] - sols[0][i]).abs() < 1e-8);
        }
    }
    assert!((sols[0][0] - 0.5).abs() < 1e-8 && sols[0][1].abs() < 1e-8 && (sols[0][2] - 1.0).abs() < 1e-8);
}

#[test]
fn single_start_matches_bare_solver() {
    let q = DenseMatrix::from_diag(&[-1.0, 2.0]);
    let obj = Arc::new(QuadraticObjective::linear_param(q));
    let proj = box_project(vec![0.0; 2], vec![1.0; 2]).unwrap().shared();
    let inner = PgdOracle::new(obj.clone(), proj.clone(), 0.2).unwrap();
    let c = vec![0.1, -0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x0 = inner.sample_start(&mut rng).unwrap();
    let bare = inner.solve_from(&c, &x0).unwrap();
    let ms = multistart(inner, 1, 42).unwrap().solve(&c).unwrap();
    assert_eq!(bare, ms);
}

#[test]
fn nonconvex_multistart_matches_grid() {
    // min ½xᵀQx + cᵀx over [0,1]² with indefinite Q
    let q = DenseMatrix::from_row_major(2, 2, vec![-2.0, 1.5, 1.5, -1.0]).unwrap();
    let obj = Arc::new(QuadraticObjective::linear_param(q));
    let proj = box_project(vec![0.0; 2], vec![1.0; 2]).unwrap().shared();
    let c = vec![0.8, 0.4];
    let ms = multistart(PgdOracle::new(obj.clone(), proj, 0.2).unwrap(), 20, 5).unwrap();
    let x = ms.solve(&c).unwrap().x_star;
    let f = obj.value(&x, &c);
    let mut best = f64::INFINITY;
    for i in 0..=1000 {
        for j in 0..=1000 {
            best = best.min(obj.value(&[i as f64 * 1e-3, j as f64 * 1e-3], &c));
        }
    }
    assert!((f - best).abs() <= 1e-3, "{f} vs {best}");
}

#[test]
fn file_oracle_requires_exact_match() {
    let text = "c0,c1,x0,x1\n1.5,2,0.25,0.75\n-1,0.1,1,0\n";
    let o = FileOracle::<f64>::from_csv(text, 2, 1e-10).unwrap();
    assert_eq!(o.len(), 2);
    assert_eq!(o.solve(&[1.5, 2.0]).unwrap().x_star, vec![0.25, 0.75]);
    assert!(o.solve(&[1.5, 2.0000000001]).is_err());
}
