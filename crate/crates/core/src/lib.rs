//! Multi-output Gaussian-process regression for age/year mortality surfaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`lifetable`] parses death/exposure tables into log-mortality training sets.
//! * [`covariates`] runs the covariate PCA and exposes the eigenvalue-weighted
//!   state distance.
//! * [`grouping`] builds contiguity-constrained state groups from that distance.
//! * [`kernels`] evaluates Matérn-5/2 and squared-exponential APC kernels and the
//!   intrinsic-coregionalization covariance.
//! * [`gp`] fits hyperparameters by profile maximum likelihood and produces
//!   universal-kriging posteriors.
//! * [`analysis`] derives improvement factors, rankings and dispersion metrics.

pub mod analysis;
pub mod covariates;
pub mod gp;
pub mod grouping;
pub mod kernels;
pub mod lifetable;
mod optimize;
pub mod state;

pub use analysis::{AnalysisError, MiInterval, MiSurface, RankTable, Surface};
pub use covariates::{CovariateError, CovariateTable, PcaResult};
pub use gp::{FitConfig, FittedModel, GpError, Hyperparameters, PosteriorPrediction, TrendMode};
pub use grouping::{AdjacencyGraph, GroupingError, PopulationTable, Provenance, StateGroup};
pub use kernels::{CoregionalizationMatrix, InputPoint, KernelFamily, KernelParams};
pub use lifetable::{LifeTableError, LifeTableRecord, Sex, TrainingSet, Window};
pub use state::StateId;
