use thiserror::Error;

use crate::expr::ExprError;

/// Errors raised by the solvers in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("generator is singular at y = 0")]
    Singularity,
    #[error("branch error: {0}")]
    Branch(String),
    #[error("regression at node {node} is ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { node: usize, cond: f64 },
    #[error("control is infeasible at node {node} (path {path})")]
    Infeasible { node: usize, path: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("state blew up on path {path} at step {step}")]
    BlowUp { path: usize, step: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("at (t = {t}, x = {x:?}): {source}")]
    AtPoint { t: f64, x: Vec<f64>, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericDomain(_)
            | Error::Singularity
            | Error::IllConditioned { .. }
            | Error::BlowUp { .. }
            | Error::Infeasible { .. } => true,
            Error::Expr(e) => matches!(e, ExprError::Domain { .. }),
            Error::AtPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
