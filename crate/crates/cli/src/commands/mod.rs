mod converge;
mod gradcheck;
mod polyak;
mod spectral;
mod train;

pub use converge::{converge, CONVERGE_HEADER};
pub use gradcheck::{gradcheck, GRADCHECK_HEADER};
pub use polyak::{polyak, POLYAK_HEADER};
pub use spectral::{fitted_rate, spectral, SPECTRAL_HEADER};
pub use train::{train, TRAIN_HEADER};

use foldcore::foldengine::TraceStatus;

/// Status of a trace judged by its final error.
pub(crate) fn status_from_error(err: f64, tol: f64) -> TraceStatus {
    if !err.is_finite() || err > 1e12 {
        TraceStatus::Diverged
    } else if err <= tol {
        TraceStatus::Converged
    } else {
        TraceStatus::IterLimit
    }
}
