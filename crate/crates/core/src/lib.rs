//! Mixed-effects general hazard (MEGH) models for clustered right-censored
//! survival data.
//!
//! The conditional hazard of subject `j` in cluster `i` is
//!
//! `h(t | x, u, u~) = h0(t exp{x~'alpha + u~}) exp{x'beta + u}`
//!
//! with a parametric baseline `h0` and a cluster random effect entering on
//! the hazard scale only ([`HazardStructure::MeghI`]) or on both scales
//! ([`HazardStructure::MeghII`]). Parameters are estimated by maximising the
//! marginal likelihood, with the random effects integrated out by adaptive
//! quadrature.
//!
//! Cluster-level work is spread over a rayon pool when the `parallel`
//! feature (on by default) is enabled; results are identical either way.

pub mod baseline;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod hazard;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod par;
pub mod quadrature;
pub mod reffects;
pub mod simulation;
pub mod stats;

pub use baseline::{BaselineFamily, BaselineHazard};
pub use data::{load_dataset, ClusteredDataset, ColumnMapping, RawTable};
pub use diagnostics::{GradientDiagnostic, LrtCase, LrtResult};
pub use error::{MeghError, Result, ValidationError};
pub use estimation::{fit, FitConfig, FitResult};
pub use hazard::{HazardStructure, RegressionCoefficients};
pub use likelihood::{log_marginal, EvalOptions};
pub use model::{ModelSpec, ParameterVector};
pub use par::Execution;
pub use reffects::{RandomEffectsDist, ReFamily};
pub use simulation::{SimConfig, StudyConfig, StudyReport};
