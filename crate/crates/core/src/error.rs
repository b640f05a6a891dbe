use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{context}: conic solve ended with status {status:?}")]
    Solver { context: String, status: SolveStatus },

    #[error("{context}: program is unbounded (the H contrast does not control every direction)")]
    Unbounded { context: String },

    #[error("H-synthesis for column {column} is infeasible")]
    InfeasibleColumn { column: usize },

    #[error("contrast H is not in the admissible set: max |[I - N^T H]_ij| = {max_entry:.3e} > kappa/s = {limit:.3e}")]
    NotAdmissible { max_entry: f64, limit: f64 },

    #[error(
        "rank-one decomposition missed its budget after {attempts} attempts: best weight sum {best:.6e} > budget {budget:.6e}"
    )]
    DecompositionBudget {
        attempts: usize,
        best: f64,
        budget: f64,
    },

    #[error("certificate rejected: {0}")]
    Certificate(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
