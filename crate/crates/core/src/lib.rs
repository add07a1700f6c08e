//! Optimal intermittent Kalman prediction.
//!
//! Given a linear Gaussian state-space model and a budget of `N` measurements
//! over a horizon of `T` steps, this crate chooses the measurement times that
//! minimize the summed one-step-ahead predicted-position error variance, runs
//! the intermittent predictor on trajectories, identifies models from
//! regularly sampled data by EM, and benchmarks everything against
//! regular-rate and hold-last-value baselines.
//!
//! The numerics are generic over the scalar type ([`Real`]: `f32` or `f64`);
//! the aliases at the crate root fix it to `f64`.

pub mod bench;
pub mod error;
pub mod ikp;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod sysid;

pub use error::{Error, Result};
pub use ikp::{
    measure_update_cov, objective, run_covariance, run_predictor, time_update_cov,
    BeliefTrajectory, CovarianceTrace,
};
pub use model::{
    regular_schedule, validate_model, ModelParams, Schedule, StateSpaceModel, ValidationReport,
    Violation, WarmupConfig,
};
pub use optimizer::{
    exhaustive_search, genetic_search, repair_duplicates, GaConfig, OptimizationResult,
    ScheduleEvaluator,
};
pub use scalar::Real;
pub use synth::{inject_noise, simulate_mass_spring, simulate_model, MassSpringConfig, Trajectory};
pub use sysid::{e_step, fit, m_step, EmConfig, FitResult, SmoothedBelief};

/// Double-precision model.
pub type Model = StateSpaceModel<f64>;
/// Double-precision model parameters.
pub type Params = ModelParams<f64>;
/// Double-precision belief trajectory.
pub type Belief = BeliefTrajectory<f64>;
/// Double-precision covariance trace.
pub type CovTrace = CovarianceTrace<f64>;
/// Double-precision trajectory.
pub type Traj = Trajectory<f64>;
/// Double-precision optimizer output.
pub type Optimized = OptimizationResult<f64>;
/// Single-precision model.
pub type ModelF32 = StateSpaceModel<f32>;
