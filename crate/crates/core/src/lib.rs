//! Sparse mixture estimation of multi-modal travel-time densities.
//!
//! The pipeline: discretize travel-time samples onto a uniform grid, smooth
//! them into an empirical density with a Gaussian kernel (updatable in O(N)
//! as samples stream in), then fit a sparse non-negative combination of
//! heavy-tailed mixture components drawn from a precomputed column-stochastic
//! dictionary by solving an l1-regularized least-squares problem on the
//! positive orthant. Model selection walks a geometric regularization path;
//! post-processing thresholds, merges, de-biases, and tops the weights up to
//! an exact unit sum with one negligible wide component.

pub mod dictionary;
pub mod em;
pub mod error;
pub mod fit;
pub mod grid;
pub mod parzen;
pub mod postprocess;
pub mod regularization;
pub mod solver;
pub mod special;
pub mod streaming;
pub mod synthetic;

pub use dictionary::{Dictionary, DictionaryConfig};
pub use em::{fit_em, EmOptions, GaussianMixture};
pub use fit::{fit_density, FitOptions, FitOutcome, RegChoice};
pub use parzen::{KernelMatrix, KernelSpec, ParzenState, UpdateMode};
pub use postprocess::{MixtureModel, RepairPlan};
pub use solver::{LassoProblem, SolverMethod, SolverOptions, SparseSolution};
pub use streaming::{RegPolicy, Snapshot, StreamConfig, StreamEstimator};

pub use error::{Error, Result};
pub use grid::TimeGrid;
