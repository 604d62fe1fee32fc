//! Two-stage estimation of nonparametric additive models with a known link
//! function, `E(Y|X=x) = F[mu + m_1(x^1) + ... + m_d(x^d)]`.
//!
//! The first stage fits a series (sieve) approximation to every additive
//! component jointly by nonlinear least squares over a zero-mean orthonormal
//! basis. The second stage refines one component at a time by taking a single
//! Newton step from the series estimate toward a kernel-weighted local-linear
//! (or local-constant) fit. The refined estimator converges pointwise at the
//! rate `n^{-2/5}` for any finite covariate dimension and is asymptotically
//! normal, which this crate exploits for plug-in confidence bands and
//! bandwidth selection.
//!
//! Module map:
//! - [`basis`]: zero-mean orthonormal bases on `[-1, 1]` and the stacked
//!   regressor vector.
//! - [`link`]: the known link `F` with its first two derivatives.
//! - [`data`]: CSV loading and rescaling of covariates onto the cube.
//! - [`first_stage`]: box-constrained Gauss-Newton for the series coefficients.
//! - [`kernel`]: second-stage kernels and their moment constants.
//! - [`second_stage`]: kernel score/Hessian sums and the one-step estimators.
//! - [`asymptotics`]: bias/variance ingredients, derivative estimation and
//!   confidence intervals.
//! - [`bandwidth`]: plug-in and penalized-least-squares bandwidth selection.
//! - [`montecarlo`]: seeded replication harness for the synthetic designs.

pub mod asymptotics;
pub mod bandwidth;
pub mod basis;
pub mod data;
pub mod first_stage;
pub mod kernel;
pub mod link;
pub mod montecarlo;
pub mod quad;
pub mod second_stage;

pub use asymptotics::{
    AsymptoticsError, AsymptoticSummary, CiMode, ConditionalVariance, DerivativeEstimator,
};
pub use bandwidth::{BandwidthError, PlsConfig, PlsSelection};
pub use basis::{Basis, BasisError, BasisFamily, BasisSpec, ModelBasis};
pub use data::{Dataset, DataError, RescaleRecord};
pub use first_stage::{FirstStageConfig, FirstStageError, FirstStageFit};
pub use kernel::Kernel;
pub use link::Link;
pub use montecarlo::{
    Dgp, DgpKind, EimseReport, Estimator, ExperimentConfig, MonteCarloError,
};
pub use second_stage::{ComponentEstimate, SecondStageConfig, SecondStageError, Smoother};
