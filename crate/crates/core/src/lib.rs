//! Tikhonov-regularized inertial dynamics for comonotone inclusions.
//!
//! The crate integrates second-order flows driven by the Yosida
//! regularization of a maximally comonotone operator, and measures how
//! their trajectories approach the minimum-norm zero.
//!
//! ```
//! use coflow::{Matrix, OperatorSpec, Vector};
//!
//! let op = OperatorSpec::linear(Matrix::diag(&[1.0, 0.0, -1.0]), -1.0, 3.0).unwrap();
//! let g = op.yosida(&Vector::new(vec![4.0, 4.0, 4.0])).unwrap();
//! assert!((g[0] - 1.0).abs() < 1e-12 && (g[2] - 2.0).abs() < 1e-12);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod operators;
pub mod parallel;
pub mod schedules;

pub use diagnostics::{
    decay_certificate, energy, energy_series, fit_quantity, fit_rate, lemma_ineq_check,
    viscosity_iterative, viscosity_point, DecayCertificate, EnergyRecord, RateFit, RateQuantity,
};
pub use dynamics::{
    ds_vector_field, initial_phase_state, solve_batch, tds_vector_field, InertialProblem,
    PhaseState, SystemKind,
};
pub use error::{Error, Result};
pub use integrator::{integrate, Dopri5, IntegratorConfig, PhaseSample, StepStats, Trajectory};
pub use linalg::{solve_dense, sym_eigen, sym_eigen_min, LuFactors, Matrix, SymEigen, Vector};
pub use operators::{
    certify_comonotone, check_averagedness_sample, check_cocoercivity_sample,
    check_cocoercivity_sample_with, check_lipschitz_sample, ComonotonicityCertificate,
    ExecutionMode, OperatorKind, OperatorSpec, SampleCheck, SamplingOptions,
};
pub use parallel::Execution;
pub use schedules::{
    check_hypotheses, delta_window, log_grid, DynamicsParams, HypothesisEntry, HypothesisReport,
    TikhonovSchedule, Verdict,
};
