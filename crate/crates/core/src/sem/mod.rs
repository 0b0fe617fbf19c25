//! Confirmatory factor analysis: model specification, ML estimation and
//! model evaluation.

mod discrepancy;
mod fit;
pub mod indices;
mod layout;
pub mod noncentral;
mod optimize;
mod spec;

pub use discrepancy::{fml, moment_jacobian, moment_weight, Discrepancy, BARRIER};
pub use fit::{
    fit_indices, fit_layout, fit_model, objective_gradient, robust_se, satorra_bentler, ChisqMultiplier, FitOptions,
    FitResult, GroupFit, ScaledStatistic,
};
pub use indices::{FitIndices, IndexInputs};
pub use layout::{GroupBlock, ParameterLayout, ParameterVector, VARIANCE_FLOOR};
pub use optimize::{OptimOptions, OptimOutcome};
pub use spec::{
    compile_model, implied_moments, FactorModelSpec, ModelMatrices, ModelOptions,
    Param, Slot,
};
