//! Linear, quadratic and second-order-cone programs with constraint duals, plus a
//! lexicographic multi-stage driver.
//!
//! Programs are assembled through [`ConvexProgram`] and handed to the Clarabel
//! interior-point solver. Duals are reported in one fixed convention:
//!
//! * equality constraint: `∂objective/∂rhs`;
//! * inequality constraint or variable bound: the nonnegative multiplier, i.e. the
//!   objective improvement per unit of relaxation.

mod expr;
mod lexi;
mod program;
mod solve;

pub use expr::{LinExpr, Objective, VarId};
pub use lexi::{
    degradation_cap, lexicographic_solve, LexiConfig, LexiError, Stage, StageResult,
    StagedSolution,
};
pub use program::{ConeId, ConstraintId, ConvexProgram, Sense};
pub use solve::{solve, Diagnostics, Solution, SolverSettings, Status};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvexError {
    #[error("unknown constraint `{0}`")]
    UnknownConstraint(String),
    #[error("solution is not optimal ({0})")]
    NotOptimal(String),
    #[error("invalid program: {0}")]
    InvalidProgram(String),
}
