//! One KAM step and the iteration driver.

mod gamma;
mod homological;
mod iterate;
mod lie;
mod schedule;
mod step;
mod translate;

pub use gamma::{
    gamma_bound_diagnostic, gamma_fast_slice, gamma_mixed_slice, gamma_slow_slice, lattice_shell_count,
    GammaDiagnostic,
};
pub use homological::{divisor_gate, small_divisor, solve_homological, HomologicalSolution};
pub use iterate::{iterate, Classification, IterationConfig, IterationReport, StallReason};
pub use lie::{lie_increment, lie_transform};
pub use schedule::{build_schedule, cutoff_from_mu, Schedule, ScheduleInit};
pub use step::{
    kam_step, tail_integral, truncate_perturbation, AdmissibilityCheck, StepConfig, StepMode, StepReport,
    TailReport,
};
pub use translate::{absorb_average, isoenergetic_translate, retention_translate, Translation};

use thiserror::Error;

use crate::fourier_taylor::SeriesError;
use crate::hamiltonian::HamiltonianError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("small divisor requested for the zero mode")]
    ZeroMode,
    #[error("small divisor violation at k = {k:?}: |L_k| = {value:e} <= {bound:e}")]
    SmallDivisorViolation { k: Vec<i32>, value: f64, bound: f64 },
    #[error("admissibility failed: {}", failed.join(", "))]
    AdmissibilityFailed { failed: Vec<String>, checks: Vec<AdmissibilityCheck> },
    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("bordered isoenergetic matrix is singular (condition {condition:e})")]
    BorderedSingular { condition: f64 },
    #[error("schedule has no entry for step {0}")]
    ScheduleExhausted(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}
