//! Fused sparse group lasso regression.
//!
//! The estimator minimizes
//!
//! ```text
//! 1/2 ||y - X beta||^2 + lambda1 ||beta||_1 + lambda2 ||D beta||_1 + lambda3 sum_g sqrt(p_g) ||beta_g||_2
//! ```
//!
//! where `D` takes differences between face-adjacent cells of a 1-3
//! dimensional grid and the groups partition the coefficients. Problems are
//! solved with ADMM after rewriting all three terms as weighted l2 norms of
//! row blocks of a stacked operator `K`.

pub mod admm;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod sim;
pub mod tuning;

pub use admm::{AdmmConfig, AdmmSolver, AdmmState, Lambdas, Solution, SolveReport};
pub use error::{FsglError, Result};
pub use model::{FitResult, StandardizedDesign, TuningPoint};

pub use penalty::{
    build_fusion_matrix, build_penalty_operator, FusionStructure, GridSpec, GroupPartition,
    PenaltyOperator,
};
