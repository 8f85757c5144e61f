//! Matrix-geometric equilibrium solver for the job-server chain.
//!
//! With exponential workloads the job-server process is a quasi-birth-death
//! (QBD) process: the level is the job count `n_c`, the phase is the server
//! count `n_s`, truncated at a cap `M_s`. Transitions are level-independent
//! above level 0, so the stationary distribution is matrix-geometric,
//! `pi_k = pi_0 * R^k`, where `R` is the minimal nonnegative solution of
//! `A0 + R*A1 + R^2*A2 = 0`.
//!
//! Two independent routes are provided: [`solve_r`] (logarithmic reduction)
//! feeding [`solve_equilibrium`], and [`brute_force_truncated`], which
//! assembles the level-truncated generator and solves the global balance
//! equations directly by banded elimination. The second exists purely as an
//! oracle for the first.

mod blocks;
mod brute;
mod equilibrium;
mod gth;
mod rmatrix;

pub use blocks::{build_blocks, default_phase_cap, QbdBlocks};
pub use brute::{brute_force_truncated, global_balance_residual};
pub use equilibrium::{
    conditional_profiles, solve_equilibrium, tv_distance, ConditionalProfiles, EquilibriumSolution,
    Moments, PROFILE_MASS_FLOOR,
};
pub use gth::gth_stationary;
pub use rmatrix::{residual, solve_r, solve_r_fixed_point, spectral_radius};

use thiserror::Error;

/// Default tolerance for the `R`-matrix residual.
pub const DEFAULT_R_TOL: f64 = 1e-13;
/// Default iteration cap for [`solve_r`].
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum QbdError {
    #[error(
        "R iteration did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(
        "model is unstable at this truncation: mean level drift up {mean_drift_up} \
         >= service capacity {service_capacity}"
    )]
    UnstableModel {
        mean_drift_up: f64,
        service_capacity: f64,
    },
    #[error("boundary system is singular beyond nullity one")]
    SingularBoundary,
    #[error("truncated generator is singular; the construction is broken")]
    SingularGenerator,
    #[error("truncated chain has {states} states, more than the {max} allowed")]
    TooManyStates { states: usize, max: usize },
}
