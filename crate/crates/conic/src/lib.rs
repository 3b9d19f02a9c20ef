//! Interior-point solver for max-min problems over concave complex quadratics.
//!
//! The entry point is [`solve`], which takes a [`MaxMinQP`]: a set of
//! concave quadratic pieces to be maximized jointly (the minimum of them),
//! a unit box or power ball domain, and optional convex quadratic
//! constraints. The problem is rewritten as a real second-order cone
//! program and handed to [`socp::solve_socp`].

pub mod form;
pub mod maxmin;
pub mod socp;

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub use form::HermitianForm;
pub use maxmin::{refine, solve, ConicSolution, Domain, KktResiduals, MaxMinQP, QuadConstraint, QuadPiece, SolveStatus, SolverSettings};

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian (relative skew {0:e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("problem has no objective pieces")]
    NoPieces,
    #[error("non-finite problem data")]
    NonFinite,
    #[error("constraint matrix does not have full column rank")]
    RankDeficient,
}
