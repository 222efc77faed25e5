//! Estimators for the drift, variance, Laplace transform and rate function, and deviation probes.

pub mod laplace;
pub mod probes;
pub mod rate;

pub use laplace::{
    estimate_clt_variance, estimate_drift, estimate_laplace, fekete_upper_bound, Backend, LaplaceCell,
    LaplaceCurve, McBudget,
};
pub use probes::{
    azuma_bound, azuma_check_cocycle, azuma_check_rademacher, cesaro_block_bound, cesaro_block_check,
    laplace_control_check, punctual_deviation_probe, qv_ldp_probe, BoundCheck, LaplaceControlReport,
    PunctualReport, QvLdpReport, TailCell,
};
pub use rate::{
    curvature_at_drift, legendre_transform, legendre_transform_values, rate_curvature, x_grid, CurvatureFit,
    RateCurve,
};

/// Default `|λ|` cap as a fraction of the measure's exponential-moment parameter.
pub const LAMBDA_MAX_FRACTION: f64 = 0.25;
