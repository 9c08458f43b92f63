//! Multilevel and multi-index Monte Carlo / quasi-Monte Carlo estimation of
//! output functionals of elliptic PDEs with uniform random coefficients,
//! using tensor-product grids and the sparse combination technique.

pub mod error;
pub mod estimators;
pub mod grid;
pub mod index;
pub mod model;
pub mod rates;
pub mod sampler;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{cost_model, functional_value, solve, CostMode, GridSolution, SolverConfig, SolverKind};
pub use index::{IndexSet, MultiIndex};
pub use model::{Field, ProblemSpec};
pub use estimators::{Driver, EstimatorParams, EstimatorReport, LevelKey, LevelRecord};
