use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} needs a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("polynomial matrix is singular (determinant vanishes identically)")]
    Singular,
    #[error("the zero polynomial has no roots")]
    ZeroPolynomial,
    #[error("division by the zero polynomial")]
    DivisionByZero,
    #[error("{what}: residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    Residual {
        what: String,
        residual: f64,
        tol: f64,
    },
    #[error("mode {mode} is not Hurwitz: root {root} has real part >= -{tol:e}")]
    NotHurwitz { mode: usize, root: String, tol: f64 },
    #[error("mode {mode}: root {root} has algebraic multiplicity {algebraic} but kernel dimension {geometric}")]
    Multiplicity {
        mode: usize,
        root: String,
        algebraic: usize,
        geometric: usize,
    },
    #[error("transition {from}->{to} is not well-posed (F+ has rank {rank} < {cols})")]
    NotWellPosed {
        from: usize,
        to: usize,
        rank: usize,
        cols: usize,
    },
    #[error("transition {from}->{to} is not in the gluing map")]
    MissingTransition { from: usize, to: usize },
    #[error("transition {from}->{to} is inconsistent for the pre-switch state (range residual {residual:.3e})")]
    Inconsistent { from: usize, to: usize, residual: f64 },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("indefinite input: {0}")]
    Indefinite(String),
    #[error("not supported: {0}")]
    NotSupported(String),
    #[error("not strictly positive-real: {0}")]
    NotPositiveReal(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
