//! The constant-drift cocycle, its martingale and Freedman-type transforms.

pub mod centering;
pub mod checks;
pub mod inequality;
pub mod trace;

pub use centering::{
    drift_of, solve_centering, solve_centering_report, BoundaryGrid, DriftCocycle, Extension,
    GridKernel, PsiSolution,
};
pub use checks::{conditional_mgf_bound_check, submartingale_transform_check};
pub use inequality::{freedman_base_check, freedman_f, scalar_inequality_check, DiscreteDistribution};
pub use trace::{
    accelerated_variance, difference_bound_check, martingale_trace, pathwise_sweep,
    sigma_sq_occupation, MartingaleTrace,
};
