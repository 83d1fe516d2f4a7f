//! Estimation of delta-tilted local average treatment effects for continuous
//! instrumental variables, without a positivity assumption.
//!
//! The instrument's conditional law is replaced by an exponentially tilted
//! version; the resulting local effect is identified through three nuisance
//! regressions and estimated either by a plug-in ratio or by a doubly robust
//! influence-function estimator with cross-fitting. The crate also provides
//! uniform inference over a grid of tilt values, principal-strata profiling,
//! a monotonicity sensitivity analysis, and a Monte Carlo study harness.
//!
//! Data-parallel loops (fold fits, study replications, bootstrap draws) run
//! on rayon when the default `parallel` feature is enabled and fall back to
//! sequential execution without it; results are identical either way.

pub mod data;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod nuisance;
pub mod profiling;
pub mod rng;
pub mod sensitivity;
pub mod simulation;
pub mod tilt;

pub use data::{CsvSchema, Dataset, FoldAssignment, Observation};
pub use error::{Error, Result};
pub use estimators::{
    compute_if_values, estimate_curve, estimate_if, estimate_plugin, estimate_two_tilt,
    test_homogeneity, CurveEstimate, HomogeneityReport, IfValues, LateEstimate, Method,
};
pub use nuisance::{fit_nuisances, select_hyperparams, LearnerKind, LearnerSpec, NuisanceFit};
pub use tilt::EPSILON_ZERO;
