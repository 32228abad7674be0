use foldcore::linalg::vecops::{norm_inf, rel_inf, sub};
use foldcore::linalg::{lu_solve, DenseMatrix};
use foldcore::solvers::{admm_qp_solve, qp_active_set_solve, AdmmFold, AdmmSettings, QpParams, QpProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_qp(n: usize, m: usize, seed: u64) -> QpProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = l.matmul(&l.transpose()).add(&DenseMatrix::identity(n).scaled(0.1));
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..1.0));
    // b = A x₀ for a strictly positive x₀ keeps the feasible set nonempty.
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let b = a.matvec(&x0);
    QpProblem::new(q, p, a, b, true).unwrap()
}

#[test]
fn symmetric_simplex_qp() {
    let qp = QpProblem::new(
        DenseMatrix::<f64>::identity(4),
        vec![0.0; 4],
        DenseMatrix::from_rows(&[vec![1.0; 4]]).unwrap(),
        vec![1.0],
        true,
    )
    .unwrap();
    let sol = admm_qp_solve(&qp, 1.0, 1e-10, 10_000).unwrap();
    for v in &sol.x {
        assert!((*v - 0.25f64).abs() < 1e-9);
    }
}

#[test]
fn equality_only_matches_direct_kkt() {
    let mut qp = random_qp(5, 2, 9);
    qp.nonneg = vec![false; 5];
    let sol = admm_qp_solve(&qp, 1.0, 1e-12, 10_000).unwrap();
    let k = qp.kkt_matrix(0.0);
    let mut rhs: Vec<f64> = qp.p.iter().map(|v| -v).collect();
    rhs.extend_from_slice(&qp.b);
    let direct = lu_solve(&k, &rhs).unwrap();
    assert!(norm_inf(&sub(&sol.x, &direct[..5])) < 1e-9);
}

#[test]
fn matches_active_set_enumeration() {
    for seed in 0..20 {
        let qp = random_qp(6, 2, seed);
        let sol = admm_qp_solve(&qp, 1.0, 1e-10, 50_000).unwrap();
        let exact = qp_active_set_solve(&qp, 1e-10).unwrap();
        let err = norm_inf(&sub(&sol.x, &exact));
        assert!(err <= 1e-6, "seed {seed}: err {err}, polished {}", sol.polished);
        assert!(qp.infeasibility(&sol.x) < 1e-8);
    }
}

#[test]
fn folded_pullback_matches_finite_differences() {
    let settings = AdmmSettings::<f64> { tol: 1e-13, ..Default::default() };
    for seed in 0..5 {
        let qp = random_qp(6, 2, 100 + seed);
        let fold = AdmmFold::solve(qp.clone(), QpParams::Full, &settings, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gx: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gn: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = fold.pullback(&gx, &gn).unwrap();
        let theta = fold.params().to_vec();
        let step = fold.step().clone();
        let loss = |th: &[f64]| {
            let q = step.unpack(th).unwrap();
            let f = AdmmFold::solve(q, QpParams::Full, &settings, None).unwrap();
            f.primal().iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>()
                + f.multipliers().iter().zip(&gn).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut tp = theta.clone();
                tp[i] += h;
                let mut tm = theta.clone();
                tm[i] -= h;
                (loss(&tp) - loss(&tm)) / (2.0 * h)
            })
            .collect();
        let err = rel_inf(&grad, &fd);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}
