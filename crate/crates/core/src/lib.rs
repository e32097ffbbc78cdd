//! Numerical laboratory for Riesz transforms `∇ L^{-1/2}` of weighted
//! divergence-form operators `L = -w^{-1} div(w A ∇)` on box grids.

pub mod analysis;
pub mod coeffs;
pub mod discretize;
pub mod error;
pub mod fit;
pub mod funcalc;
pub mod grid;
pub mod harness;
pub mod linalg;

pub use analysis::{pnorm_estimate, LinearMap, NormConfig, NormEstimate};
pub use coeffs::{MatrixField, SymMat, WeightField};
pub use discretize::DiscreteOperator;
pub use error::{Error, Result};
pub use fit::DecayFit;
pub use funcalc::SolverConfig;
pub use harness::{run, ExperimentConfig, ExperimentReport};
pub use grid::{Grid, GridFunction, GridMeasure, VectorGridFunction};
