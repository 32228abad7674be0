use std::sync::Arc;

use foldcore::diffstep::{
    affine, box_project, compose, fd_check, grad_step, kkt_linear_solve, project_capped_simplex, simplex_project,
    soft_threshold, AffineStep, DiffStep, DiffStepExt, FnObjective, LinearSystemFamily, QuadraticObjective, SharedStep,
};
use foldcore::linalg::vecops::norm_inf;
use foldcore::linalg::DenseMatrix;
use foldcore::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random_sym(n: usize, seed: u64) -> DenseMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.add(&m.transpose()).scaled(0.5)
}

fn random_spd(n: usize, seed: u64) -> DenseMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.matmul(&m.transpose()).add(&DenseMatrix::identity(n))
}

/// Projection onto `{Σx = mass, 0 ≤ x ≤ 1}` by enumerating which coordinates
/// sit at 0, at 1 or strictly between and solving the KKT system of each pattern.
fn capped_simplex_by_enumeration(x: &[f64], mass: f64) -> Vec<f64> {
    let n = x.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = Vec::with_capacity(n);
        let mut rest = code;
        for _ in 0..n {
            pattern.push(rest % 3);
            rest /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        let ones = pattern.iter().filter(|&&p| p == 1).count() as f64;
        let candidate: Vec<f64> = if free.is_empty() {
            if (ones - mass).abs() > 1e-12 {
                continue;
            }
            pattern.iter().map(|&p| if p == 1 { 1.0 } else { 0.0 }).collect()
        } else {
            let tau = (free.iter().map(|&i| x[i]).sum::<f64>() + ones - mass) / free.len() as f64;
            (0..n)
                .map(|i| match pattern[i] {
                    0 => 0.0,
                    1 => 1.0,
                    _ => x[i] - tau,
                })
                .collect()
        };
        if candidate.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
            continue;
        }
        let dist: f64 = candidate.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, candidate));
        }
    }
    best.expect("feasible set is nonempty").1
}

// grad_step

#[test]
fn grad_step_on_half_norm_squared() {
    let obj = QuadraticObjective::linear_param(DenseMatrix::identity(2));
    let step = grad_step(obj, 0.5).unwrap();
    assert_eq!(step.eval(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    let g = [3.0, -2.0];
    assert!(close(&step.vjp_state(&[1.0, 1.0], &[0.0, 0.0], &g).unwrap(), &[1.5, -1.0], 1e-15));
}

#[test]
fn grad_step_linear_objective_param_pullback() {
    // f = cᵀx
    let obj = FnObjective::new(
        3,
        3,
        |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| a * b).sum(),
        |_x: &[f64], c: &[f64]| c.to_vec(),
        |_x: &[f64], _c: &[f64], _v: &[f64]| vec![0.0; 3],
        |_x: &[f64], _c: &[f64], g: &[f64]| g.to_vec(),
    );
    let step = grad_step(obj, 0.25).unwrap();
    let g = [1.0, -4.0, 2.0];
    let vp = step.vjp_param(&[0.0; 3], &[1.0, 2.0, 3.0], &g).unwrap();
    assert!(close(&vp, &[-0.25, 1.0, -0.5], 1e-15));
}

#[test]
fn grad_step_quadratic_matches_finite_differences() {
    let q = random_sym(4, 3);
    let step = grad_step(QuadraticObjective::linear_param(q), 0.3).unwrap();
    let r = fd_check(&step, &[0.1, -0.4, 0.7, 0.2], &[0.5, 0.0, -1.0, 0.3], 1e-5, 8, 1).unwrap();
    assert!(r.max_rel_err_state <= 1e-6, "{r:?}");
    assert!(r.max_rel_err_param <= 1e-6, "{r:?}");
}

#[test]
fn grad_step_rejects_nonpositive_stepsize() {
    let obj = QuadraticObjective::linear_param(DenseMatrix::<f64>::identity(2));
    assert!(grad_step(obj.clone(), 0.0).is_err());
    assert!(grad_step(obj, -1.0).is_err());
}

// box_project

#[test]
fn box_project_examples() {
    let p = box_project(vec![0.0; 3], vec![1.0; 3]).unwrap();
    assert_eq!(p.eval(&[1.5, -0.2, 0.3], &[]).unwrap(), vec![1.0, 0.0, 0.3]);
    let g = [1.0, 2.0, 3.0];
    assert_eq!(p.vjp_state(&[0.2, 0.5, 0.9], &[], &g).unwrap(), g.to_vec());
    assert_eq!(p.vjp_state(&[1.5, 0.5, 0.5], &[], &[1.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
    assert!(p.vjp_param(&[1.5, 0.5, 0.5], &[], &g).unwrap().is_empty());
    assert!(box_project(vec![1.0], vec![0.0]).is_err());
}

#[test]
fn box_project_fd_check_at_clamped_point() {
    let p = box_project(vec![-1.0; 4], vec![1.0; 4]).unwrap();
    let r = fd_check(&p, &[1.5, -2.0, 0.3, -0.6], &[], 1e-5, 6, 2).unwrap();
    assert!(r.max_rel_err_state <= 1e-6, "{r:?}");
}

// simplex_project

#[test]
fn simplex_project_examples() {
    let p = simplex_project(3, 1.0).unwrap();
    let y = p.eval(&[0.3, 0.3, 0.3], &[]).unwrap();
    assert!(close(&y, &[1.0 / 3.0; 3], 1e-12));
    let y = p.eval(&[2.0, 0.0, 0.0], &[]).unwrap();
    assert!(close(&y, &[1.0, 0.0, 0.0], 1e-12));
}

#[test]
fn simplex_project_jacobian_is_centering_on_free_set() {
    let p = simplex_project::<f64>(4, 2.0).unwrap();
    // coordinate 0 is capped at 1, coordinate 3 clamps to 0
    let x = [3.0, 0.6, 0.5, -2.0];
    let y = p.eval(&x, &[]).unwrap();
    assert!((y[0] - 1.0).abs() < 1e-12 && y[3] == 0.0);
    let g = [5.0, 1.0, 3.0, 7.0];
    let v = p.vjp_state(&x, &[], &g).unwrap();
    assert!(close(&v, &[0.0, -1.0, 1.0, 0.0], 1e-12), "{v:?}");
}

#[test]
fn simplex_project_rejects_infeasible_mass() {
    assert!(matches!(simplex_project::<f64>(3, 4.0), Err(Error::InfeasibleMass { .. })));
    assert!(simplex_project::<f64>(3, 0.0).is_err());
}

#[test]
fn simplex_project_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..2.0)).collect();
        let y = project_capped_simplex(&x, 2.0).unwrap();
        let oracle = capped_simplex_by_enumeration(&x, 2.0);
        assert!(close(&y, &oracle, 1e-10), "x={x:?}\n{y:?}\n{oracle:?}");
    }
}

// soft_threshold

#[test]
fn soft_threshold_examples() {
    let s = soft_threshold(3, 1.0).unwrap();
    assert_eq!(s.eval(&[2.0, -0.5, 0.0], &[]).unwrap(), vec![1.0, 0.0, 0.0]);
    let id = soft_threshold(3, 0.0).unwrap();
    let x = [0.3, -2.0, 1.0];
    assert_eq!(id.eval(&x, &[]).unwrap(), x.to_vec());
    assert_eq!(id.vjp_state(&x, &[], &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    let one = soft_threshold::<f64>(1, 1.0).unwrap();
    let y = one.eval(&[1.0 + 1e-3], &[]).unwrap();
    assert!((y[0] - 1e-3).abs() < 1e-15);
    assert_eq!(one.vjp_state(&[1.0 + 1e-3], &[], &[1.0]).unwrap(), vec![1.0]);
    assert!(soft_threshold::<f64>(2, -0.1).is_err());
}

#[test]
fn soft_threshold_fd_check_away_from_kinks() {
    let s = soft_threshold(5, 0.5).unwrap();
    let r = fd_check(&s, &[1.2, -0.9, 0.1, -0.2, 3.0], &[], 1e-5, 6, 3).unwrap();
    assert!(r.max_rel_err_state <= 1e-6, "{r:?}");
}

// kkt_linear_solve

/// `(S + diag(c)) z = x` for a fixed SPD `S`.
struct ShiftedSystem {
    base: DenseMatrix<f64>,
}

impl LinearSystemFamily<f64> for ShiftedSystem {
    fn state_dim(&self) -> usize {
        self.base.rows()
    }
    fn param_dim(&self) -> usize {
        self.base.rows()
    }
    fn system_dim(&self) -> usize {
        self.base.rows()
    }
    fn matrix(&self, c: &[f64]) -> foldcore::Result<DenseMatrix<f64>> {
        Ok(self.base.add(&DenseMatrix::from_diag(c)))
    }
    fn rhs(&self, x: &[f64], _c: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn rhs_vjp_state(&self, _x: &[f64], _c: &[f64], w: &[f64]) -> Vec<f64> {
        w.to_vec()
    }
    fn rhs_vjp_param(&self, _x: &[f64], c: &[f64], _w: &[f64]) -> Vec<f64> {
        vec![0.0; c.len()]
    }
    fn matrix_vjp(&self, _c: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }
}

#[test]
fn kkt_solve_identity_and_diagonal() {
    let id = kkt_linear_solve(ShiftedSystem {
        base: DenseMatrix::identity(2),
    });
    let c = [0.0, 0.0];
    assert_eq!(id.eval(&[3.0, 4.0], &c).unwrap(), vec![3.0, 4.0]);
    assert!(close(&id.vjp_state(&[3.0, 4.0], &c, &[1.0, -1.0]).unwrap(), &[1.0, -1.0], 1e-15));

    let diag = kkt_linear_solve(ShiftedSystem {
        base: DenseMatrix::identity(2).scaled(2.0),
    });
    assert!(close(&diag.eval(&[2.0, 4.0], &c).unwrap(), &[1.0, 2.0], 1e-15));
    assert!(close(&diag.vjp_state(&[2.0, 4.0], &c, &[1.0, 3.0]).unwrap(), &[0.5, 1.5], 1e-15));
}

#[test]
fn kkt_solve_fd_check_on_random_spd() {
    let step = kkt_linear_solve(ShiftedSystem { base: random_spd(6, 4) });
    let x = [0.3, -1.0, 0.2, 0.8, -0.5, 1.1];
    let c = [0.1, 0.4, 0.0, 0.2, 0.3, 0.05];
    let r = fd_check(&step, &x, &c, 1e-5, 8, 5).unwrap();
    assert!(r.max_rel_err_state <= 1e-6, "{r:?}");
    assert!(r.max_rel_err_param <= 1e-6, "{r:?}");
}

#[test]
fn kkt_solve_reports_singular_matrix() {
    let step = kkt_linear_solve(ShiftedSystem {
        base: DenseMatrix::zeros(2, 2),
    });
    assert!(matches!(step.eval(&[1.0, 1.0], &[0.0, 0.0]), Err(Error::SingularMatrix { .. })));
}

// compose

#[test]
fn compose_of_identities_is_identity() {
    let id: SharedStep<f64> = AffineStep::scaled_identity(3, 1.0).shared();
    let c = compose(vec![id.clone(), id]).unwrap();
    let x = [1.0, 2.0, 3.0];
    let p = [0.0; 3];
    assert_eq!(c.eval(&x, &p).unwrap(), x.to_vec());
    assert_eq!(c.vjp_state(&x, &p, &[1.0, 0.0, -1.0]).unwrap(), vec![1.0, 0.0, -1.0]);
}

#[test]
fn pgd_composition_matches_manual_update() {
    let q = random_spd(4, 8);
    let obj = Arc::new(QuadraticObjective::linear_param(q.clone()));
    let alpha = 0.05;
    let step = compose(vec![
        grad_step(obj.clone(), alpha).unwrap().shared(),
        simplex_project(4, 2.0).unwrap().with_param_dim(4).shared(),
    ])
    .unwrap();
    let x = [0.5, 0.5, 0.5, 0.5];
    let c = [1.0, -1.0, 0.5, 0.0];
    let mut y = q.matvec(&x);
    for i in 0..4 {
        y[i] = x[i] - alpha * (y[i] + c[i]);
    }
    let expected = project_capped_simplex(&y, 2.0).unwrap();
    assert!(close(&step.eval(&x, &c).unwrap(), &expected, 1e-14));
}

#[test]
fn three_stage_chain_matches_finite_differences() {
    let q = random_spd(5, 9);
    let phi = DenseMatrix::from_fn(5, 5, |i, j| if i == j { 0.5 } else { 0.1 * (i as f64 - j as f64) });
    let psi = DenseMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.0 });
    let chain = compose(vec![
        grad_step(QuadraticObjective::linear_param(q), 0.1).unwrap().shared(),
        soft_threshold(5, 0.05).unwrap().with_param_dim(5).shared(),
        affine(phi, psi.scaled(0.3), vec![0.1; 5]).unwrap().shared(),
    ])
    .unwrap();
    let x = [0.9, -1.3, 0.4, 2.0, -0.7];
    let c = [0.2, -0.1, 0.5, -0.3, 0.6];
    let r = fd_check(&chain, &x, &c, 1e-5, 8, 6).unwrap();
    assert!(r.max_rel_err_state <= 1e-6, "{r:?}");
    assert!(r.max_rel_err_param <= 1e-6, "{r:?}");
}

#[test]
fn compose_rejects_mismatched_stages() {
    let a: SharedStep<f64> = AffineStep::scaled_identity(3, 1.0).shared();
    let b: SharedStep<f64> = AffineStep::scaled_identity(4, 1.0).shared();
    assert!(matches!(compose(vec![a, b]), Err(Error::DimensionMismatch { .. })));
}

// fd_check

#[test]
fn fd_check_identity_is_exact() {
    let id = AffineStep::<f64>::scaled_identity(4, 1.0);
    let r = fd_check(&id, &[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 1e-5, 5, 0).unwrap();
    assert!(r.max_rel_err_state <= 1e-10 && r.max_rel_err_param <= 1e-10, "{r:?}");
    assert_eq!(r.probe_count, 5);
    assert!(fd_check(&id, &[1.0; 4], &[0.0; 4], 0.0, 1, 0).is_err());
}

// properties

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn shipped_steps() -> Vec<(&'static str, SharedStep<f64>)> {
    let q = random_spd(5, 21);
    vec![
        ("grad", grad_step(QuadraticObjective::linear_param(q.clone()), 0.1).unwrap().shared()),
        ("box", box_project(vec![-1.0; 5], vec![1.0; 5]).unwrap().with_param_dim(5).shared()),
        ("simplex", simplex_project(5, 2.0).unwrap().with_param_dim(5).shared()),
        ("soft", soft_threshold(5, 0.3).unwrap().with_param_dim(5).shared()),
        ("kkt", kkt_linear_solve(ShiftedSystem { base: q }).shared()),
    ]
}

/// True when every kink of the shipped steps is more than `margin` away from `x`.
fn away_from_kinks(x: &[f64], margin: f64) -> bool {
    let y = project_capped_simplex(x, 2.0).unwrap();
    let Some(free) = (0..x.len()).find(|&i| y[i] > 0.0 && y[i] < 1.0) else {
        return false;
    };
    let tau = x[free] - y[free];
    let simplex_clear = x.iter().all(|&v| (v - tau).abs() > margin && (v - tau - 1.0).abs() > margin);
    simplex_clear && x.iter().all(|&v| (v.abs() - 1.0).abs() > margin && (v.abs() - 0.3).abs() > margin)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pullbacks_are_linear(x in vec_strategy(5), c in prop::collection::vec(0.0f64..1.0, 5),
                            g1 in vec_strategy(5), g2 in vec_strategy(5), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        for (name, step) in shipped_steps() {
            let mix: Vec<f64> = g1.iter().zip(&g2).map(|(u, v)| a * u + b * v).collect();
            let s1 = step.vjp_state(&x, &c, &g1).unwrap();
            let s2 = step.vjp_state(&x, &c, &g2).unwrap();
            let sm = step.vjp_state(&x, &c, &mix).unwrap();
            let p1 = step.vjp_param(&x, &c, &g1).unwrap();
            let p2 = step.vjp_param(&x, &c, &g2).unwrap();
            let pm = step.vjp_param(&x, &c, &mix).unwrap();
            for i in 0..5 {
                prop_assert!((sm[i] - (a * s1[i] + b * s2[i])).abs() <= 1e-12 * (1.0 + sm[i].abs()), "{name}");
                prop_assert!((pm[i] - (a * p1[i] + b * p2[i])).abs() <= 1e-12 * (1.0 + pm[i].abs()), "{name}");
            }
        }
    }

    #[test]
    fn projections_are_idempotent(x in vec_strategy(6)) {
        let bp = box_project(vec![-1.0; 6], vec![1.0; 6]).unwrap();
        let once = bp.eval(&x, &[]).unwrap();
        prop_assert!(close(&bp.eval(&once, &[]).unwrap(), &once, 1e-12));
        let sp = simplex_project(6, 2.5).unwrap();
        let once = sp.eval(&x, &[]).unwrap();
        prop_assert!(close(&sp.eval(&once, &[]).unwrap(), &once, 1e-12));
    }

    #[test]
    fn simplex_projection_is_feasible(x in prop::collection::vec(-50.0f64..50.0, 1..12), frac in 0.05f64..0.95) {
        let mass = frac * x.len() as f64;
        let y = project_capped_simplex(&x, mass).unwrap();
        prop_assert!((y.iter().sum::<f64>() - mass).abs() <= 1e-10);
        prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn shipped_steps_pass_fd_check(x in vec_strategy(5), c in prop::collection::vec(0.0f64..1.0, 5), seed in any::<u64>()) {
        let h = 1e-5;
        prop_assume!(away_from_kinks(&x, 10.0 * h));
        for (name, step) in shipped_steps() {
            let r = fd_check(&*step, &x, &c, h, 3, seed).unwrap();
            prop_assert!(r.max_rel_err_state <= 1e-5 && r.max_rel_err_param <= 1e-5, "{name}: {r:?}");
        }
    }

    #[test]
    fn outputs_finite_for_finite_inputs(x in vec_strategy(5), c in prop::collection::vec(0.0f64..1.0, 5), g in vec_strategy(5)) {
        for (name, step) in shipped_steps() {
            let y = step.eval(&x, &c).unwrap();
            prop_assert!(norm_inf(&y).is_finite(), "{name}");
            prop_assert!(norm_inf(&step.vjp_state(&x, &c, &g).unwrap()).is_finite(), "{name}");
            prop_assert!(norm_inf(&step.vjp_param(&x, &c, &g).unwrap()).is_finite(), "{name}");
        }
    }
}
