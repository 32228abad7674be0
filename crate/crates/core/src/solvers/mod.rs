//! Forward solvers built from differentiable steps, and the folded layers they back.

mod admm;
mod fdpg;
mod layers;
mod pgd;
mod qp;
mod sqp;

pub use admm::{admm_qp_solve, admm_qp_solve_with, AdmmFold, AdmmSettings, AdmmSolution, AdmmStep, KktPoint, QpParams};
pub use fdpg::{denoising_objective, fdpg_solve, FdpgReadout, FdpgSolution, FdpgStep};
pub use pgd::{pgd_solve, pgd_step, ForwardTrace, SolveOutcome, StepsizePolicy};
pub use qp::{qp_active_set_solve, QpProblem};
pub use sqp::{sqp_solve, NlpProblem, QpDataCotangent, QpDataPullback, SqpStep};
pub use layers::{
    make_layer_ffdpg, make_layer_fpgda, make_layer_fpgdb, make_layer_fsqp, multistart, FdpgOracle, FileOracle, FnOracle,
    FoldedQpProjection, MultiStart, PgdOracle, PolytopeProjection, RestartableSolver, SqpOracle, DEFAULT_ORACLE_TOL,
};
