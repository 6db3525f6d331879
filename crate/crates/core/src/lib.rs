//! High-index saddle dynamics and solution-landscape construction.
//!
//! The crate is organized bottom-up: [`expr`] parses and differentiates
//! symbolic energies, [`system`] normalizes a problem to a field `G`,
//! [`hessian`] and [`eigen`] handle the unstable subspace, [`dynamics`] runs
//! single saddle searches and [`landscape`] assembles the pathway graph.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod eigen;
pub mod export;
pub mod expr;
pub mod gallery;
pub mod hessian;
pub mod landscape;
pub mod state;
pub mod system;

pub use expr::{parse_expression, CompiledScalarFn, CompiledVectorFn, Expr, ExprError};
pub use hessian::{DenseOperator, HessianAction, HessianOperator};
pub use system::{build_from_energy, build_from_force, EnergySource, SystemOptions, SystemSpec};

pub use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("LOBPCG requires a symmetric operator")]
    NonSymmetricOperator,
    #[error("rank-deficient eigenvector block")]
    RankDeficient,
    #[error("No more saddle points found in the search area!")]
    NoSaddleFound,
    #[error("Invalid saddle ID")]
    InvalidSaddleId,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
