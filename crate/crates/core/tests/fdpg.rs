use std::sync::Arc;

use foldcore::diffstep::{fd_check, DiffStep, DiffStepExt};
use foldcore::foldengine::{BackwardMode, FixedPoint, FoldedLayer, Oracle, Readout};
use foldcore::linalg::DenseMatrix;
use foldcore::solvers::{denoising_objective, fdpg_solve, FdpgReadout, FdpgStep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn difference(n: usize) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(n - 1, n, |i, j| {
        if j == i {
            -1.0
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    })
}

fn signal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| if i < n / 2 { 1.0 } else { -0.5 } + rng.random_range(-0.3..0.3))
        .collect()
}

#[test]
fn solution_satisfies_subgradient_conditions() {
    let n = 12;
    let dm = difference(n);
    let d = signal(n, 1);
    let lambda = 0.2;
    let sol = fdpg_solve(&dm, &d, lambda, 1e-12, 100_000).unwrap();
    let w = &sol.fixed_point.x_star[n - 1..];
    // u = d − Dᵀw with w ∈ λ∂‖Du‖₁ (sign convention of u = Dᵀw + d is w ↦ −w)
    let du = dm.matvec(&sol.u);
    for i in 0..n - 1 {
        assert!(w[i].abs() <= lambda + 1e-10);
        if du[i].abs() > 1e-8 {
            assert!((w[i] + lambda * du[i].signum()).abs() < 1e-8, "i={i} w={} du={}", w[i], du[i]);
        }
    }
    // compare against perturbations of the objective
    let f0 = denoising_objective(&dm, &d, lambda, &sol.u);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let x: Vec<f64> = sol.u.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
        assert!(denoising_objective(&dm, &d, lambda, &x) >= f0 - 1e-12);
    }
    assert!(sol.fixed_point.residual < 1e-10);
}

#[test]
fn step_vjp_matches_finite_differences() {
    let (n, m) = (6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let step = FdpgStep::new(n, m, 0.3).unwrap();
    for _ in 0..5 {
        let c: Vec<f64> = (0..n + m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..2 * m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let rep = fd_check(&step, &x, &c, 1e-6, 8, 4).unwrap();
        assert!(rep.max_rel_err_state < 1e-6, "{rep:?}");
        assert!(rep.max_rel_err_param < 1e-6, "{rep:?}");
    }
}

#[test]
fn readout_vjp_matches_finite_differences() {
    let (n, m) = (4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = FdpgReadout { n, m };
    let c: Vec<f64> = (0..n + m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s: Vec<f64> = (0..2 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (gs, gc) = Readout::<f64>::vjp(&r, &s, &c, &g);
    let f = |s: &[f64], c: &[f64]| -> f64 { r.apply(s, c).iter().zip(&g).map(|(a, b)| a * b).sum() };
    let h = 1e-6;
    for i in 0..s.len() {
        let (mut a, mut b) = (s.clone(), s.clone());
        a[i] += h;
        b[i] -= h;
        assert!(((f(&a, &c) - f(&b, &c)) / (2.0 * h) - gs[i]).abs() < 1e-8);
    }
    for i in 0..c.len() {
        let (mut a, mut b) = (c.clone(), c.clone());
        a[i] += h;
        b[i] -= h;
        assert!(((f(&s, &a) - f(&s, &b)) / (2.0 * h) - gc[i]).abs() < 1e-8);
    }
}

struct Solver {
    n: usize,
    m: usize,
    lambda: f64,
}

impl Oracle<f64> for Solver {
    fn solve(&self, c: &[f64]) -> foldcore::Result<FixedPoint<f64>> {
        let step = FdpgStep::new(self.n, self.m, self.lambda)?;
        let (d, dm) = step.unpack(c)?;
        Ok(fdpg_solve(&dm, &d, self.lambda, 1e-13, 200_000)?.fixed_point)
    }
    fn tolerance(&self) -> f64 {
        1e-10
    }
}

#[test]
fn folded_gradient_matches_resolved_finite_differences() {
    let n = 8;
    let m = n - 1;
    let lambda = 0.15;
    let dm = difference(n);
    let d = signal(n, 7);
    let c = FdpgStep::pack(&d, &dm);
    let g: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
    let layer = FoldedLayer::new(Arc::new(Solver { n, m, lambda }), FdpgStep::new(n, m, lambda).unwrap().shared())
        .unwrap()
        .with_readout(Arc::new(FdpgReadout { n, m }));
    let loss = |c: &[f64]| -> f64 { layer.forward(c).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum() };
    let h = 1e-6;
    for mode in [BackwardMode::Jacobian, BackwardMode::Gmres, BackwardMode::Lfpi] {
        let layer = FoldedLayer::new(Arc::new(Solver { n, m, lambda }), FdpgStep::new(n, m, lambda).unwrap().shared())
            .unwrap()
            .with_readout(Arc::new(FdpgReadout { n, m }))
            .with_backward(1e-12, 200_000);
        let grad = layer.backward_with(&c, &g, mode).unwrap().grad_c;
        for i in 0..c.len() {
            let (mut a, mut b) = (c.clone(), c.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5, "{mode:?} i={i} fd={fd} grad={}", grad[i]);
        }
    }
}

#[test]
fn fixed_point_does_not_depend_on_step_constant() {
    let n = 10;
    let dm = difference(n);
    let d = signal(n, 9);
    let sol = fdpg_solve(&dm, &d, 0.25, 1e-12, 100_000).unwrap();
    for l in [4.0, 6.0, 20.0] {
        let step = FdpgStep::new(n, n - 1, 0.25).unwrap().with_lipschitz(l);
        let out = step.eval(&sol.fixed_point.x_star, &sol.fixed_point.c).unwrap();
        let diff = out.iter().zip(&sol.fixed_point.x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }
}

#[test]
fn objective_matches_qp_reformulation() {
    use foldcore::solvers::{admm_qp_solve, QpProblem};
    // min ½‖x − d‖² + λ1ᵀt  s.t. Dx − t + s₁ = 0, −Dx − t + s₂ = 0, s ≥ 0
    let n = 15;
    let m = n - 1;
    let lambda = 0.3;
    let dm = difference(n);
    let d = signal(n, 11);
    let nv = n + 3 * m;
    let q = DenseMatrix::from_fn(nv, nv, |i, j| if i == j && i < n { 1.0 } else { 0.0 });
    let mut p = vec![0.0; nv];
    for i in 0..n {
        p[i] = -d[i];
    }
    for i in 0..m {
        p[n + i] = lambda;
    }
    let a = DenseMatrix::from_fn(2 * m, nv, |r, j| {
        let (row, sign) = if r < m { (r, 1.0) } else { (r - m, -1.0) };
        if j < n {
            sign * dm[(row, j)]
        } else if j == n + row {
            -1.0
        } else if j == n + m + r {
            1.0
        } else {
            0.0
        }
    });
    let mask: Vec<bool> = (0..nv).map(|j| j >= n + m).collect();
    let qp = QpProblem::with_mask(q, p, a, vec![0.0; 2 * m], mask).unwrap();
    let sol = admm_qp_solve(&qp, 1.0, 1e-11, 200_000).unwrap();
    let x_qp = &sol.x[..n];
    let f_qp = denoising_objective(&dm, &d, lambda, x_qp);
    let fd = fdpg_solve(&dm, &d, lambda, 1e-12, 100_000).unwrap();
    let f = denoising_objective(&dm, &d, lambda, &fd.u);
    assert!((f - f_qp).abs() <= 1e-6, "{f} vs {f_qp}");
}

#[test]
fn degenerate_inputs_return_signal() {
    let n = 6;
    let d = signal(n, 13);
    let zero = fdpg_solve(&DenseMatrix::zeros(n - 1, n), &d, 0.5, 1e-12, 100).unwrap();
    assert_eq!(zero.u, d);
    let free = fdpg_solve(&difference(n), &d, 0.0, 1e-12, 100).unwrap();
    assert_eq!(free.u, d);
    let flat = vec![0.7; n];
    let sol = fdpg_solve(&difference(n), &flat, 0.5, 1e-12, 10_000).unwrap();
    for v in sol.u {
        assert!((v - 0.7).abs() < 1e-10);
    }
}
