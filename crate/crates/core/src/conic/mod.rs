//! Solver-agnostic conic programs.
//!
//! Programs are assembled against [`ConicProgram`] (variables, affine
//! expressions, cone memberships) and handed to [`solve`], which runs the
//! Clarabel interior-point backend and then re-checks the primal point
//! itself, so an `Optimal` status always means the constraints hold.

pub mod linalg;
mod program;
mod solve;

pub use linalg::{inv_sqrt, psd_check, smat, svec};
pub use program::{
    Block, BlockKind, Cone, ConicProgram, Constraint, LinExpr, ScalarVar, Sense, SymExpr, SymVar, VecVar,
};
pub use solve::{solve, verify_point, SolveResult, SolveStatus, SolverOptions};
