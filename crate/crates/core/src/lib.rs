//! Data-driven trajectory optimization on orthonormal function bases.
//!
//! The library projects multivariate trajectories onto a truncated orthonormal
//! polynomial basis, learns a covariance model from a set of reference
//! trajectories, and solves a regularized quadratic program whose penalty is
//! the weighted Mahalanobis distance to the references. Endpoint conditions
//! become linear equations on the coefficient vector; nonlinear inequality
//! constraints are honored by bisecting over the cost weight.
//!
//! Modules follow the processing chain:
//!
//! * [`basis`] — shifted Legendre basis, derivatives, Gauss-Legendre quadrature
//! * [`trajectory`] — sampling, projection, reconstruction, endpoint systems,
//!   constraint checking
//! * [`refstats`] — reference weights, covariance estimation, kernel
//!   projection, subspace decomposition, pseudoinverse
//! * [`cost`] — quadratic and force-field costs lifted to coefficient space
//! * [`optimizer`] — the regularized quadratic program and the cost-weight
//!   bisection
//! * [`uncertainty`] — confidence bounds on the integrated cost
//! * [`datagen`] — synthetic reference generation for the bundled scenarios
//! * [`pipeline`] — CSV ingestion, end-to-end runs, reports and output files

pub mod basis;
pub mod cost;
pub mod datagen;
pub mod optimizer;
pub mod pipeline;
pub mod refstats;
pub mod trajectory;
pub mod uncertainty;

mod linalg;

pub use basis::{BasisKind, BasisSpec, GramMatrices, QuadratureRule};
pub use cost::{
    AssembledQuadraticCost, ForceFieldSpec, InstantaneousModel, QuadraticInstantaneousCost,
    ReducedQuadraticCost,
};
pub use optimizer::{MapProblem, NuSearch, Solution, WeylReport};
pub use pipeline::{RunConfig, RunResult, RunSummary};
pub use refstats::{CovarianceEstimator, CovarianceModel, ReferenceSet, SubspaceDecomposition};
pub use trajectory::{
    CoefficientVector, Constraint, ConstraintReport, ConstraintSet, EndpointConditions,
    EndpointSystem, TrajectorySamples,
};
