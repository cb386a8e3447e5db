//! Reachable-set bounds for LTI systems under an integral quadratic constraint,
//! computed by propagating families of time-varying paraboloids.

pub mod error;
pub mod family;
pub mod model;
mod ode;
pub mod oracle;
pub mod presets;
pub mod riccati;
pub mod schema;
pub mod touching;

pub use error::{Error, Result};
pub use model::{AugmentedState, InputSignal, IqcSystem, Paraboloid, SampledSignal};
pub use riccati::{
    f_rhs, g_quadrature_matrix, g_rate, param_rates, propagate, propagate_scaled, riccati_rhs,
    IntegratorConfig, ParamRates, TimeVaryingParaboloid,
};
pub use touching::{
    optimal_disturbance, touching_trajectory, trace_touching, value_derivative, xq_rate_at_zero,
    xq_rate_coefficients, AugmentedTrajectory, RateQuadratic, TouchConfig,
};
pub use oracle::{
    coverage, sample_admissible, slice_soundness, soundness, write_endpoints_csv, CoverageReport, OracleConfig, OracleRun,
    SoundnessReport, SoundnessViolation, DisturbanceStrategy, StrategyMix,
};
pub use schema::SystemFile;
pub use family::{
    assumption2_violations, build_family, check_assumptions, default_eps_q, gamma_bar,
    uniform_gammas, write_tube_csv, AssumptionConfig, AssumptionReport, FamilyConfig,
    FamilySnapshot, GammaSpec, GridSpec, Membership, ParaboloidFamily, ReachSlice, SliceBounds,
};
