//! One error type for the whole crate. Variants are grouped by pipeline
//! stage; everything implements `std::error::Error` via `thiserror`.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- model / grid construction ----
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("grid axis {axis} has {n} nodes; at least 4 are required per axis")]
    GridTooCoarse { axis: usize, n: usize },

    #[error("size mismatch in {context}: expected {expected}, got {found}")]
    SizeMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    // ---- linear algebra ----
    #[error("linear solve failed in {context}: matrix is singular or factorization broke down")]
    Singular { context: String },

    #[error("{context} did not converge after {iterations} iterations (residual {residual:.3e})")]
    IterationFailure {
        context: String,
        iterations: usize,
        residual: f64,
    },

    // ---- homogenization ----
    #[error(
        "invariant density solve produced a sign-indefinite vector (min {min:.3e}, max {max:.3e})"
    )]
    DensitySign { min: f64, max: f64 },

    #[error(
        "cell problem right-hand side for component {component} violates Fredholm compatibility: \
         |lambda| = {lambda:.3e} exceeds {threshold:.1e}"
    )]
    FredholmCompatibility {
        component: usize,
        lambda: f64,
        threshold: f64,
    },

    // ---- simulation / verification ----
    #[error(
        "switching step constraint violated: h * max_total_rate = {product:.3e} > 0.1; \
         reduce the step to h <= {suggested:.3e}"
    )]
    StepConstraint { product: f64, suggested: f64 },

    #[error("path {path_id} became non-finite at step {step}")]
    NonFinite { path_id: u64, step: usize },

    #[error("path horizon shortfall: covers {have:.6e} but {need:.6e} is required")]
    HorizonShortfall { have: f64, need: f64 },

    #[error("estimator needs at least {need} paths, got {got}")]
    TooFewPaths { got: usize, need: usize },

    #[error("paths must start at the origin for the displacement estimator (|x0| = {norm:.3e})")]
    NonzeroStart { norm: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    // ---- I/O (CSV / COO export) ----
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand used by constructors that check array shapes.
    pub(crate) fn dim(context: &str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        }
    }

    pub(crate) fn size(context: &str, expected: usize, found: usize) -> Self {
        Error::SizeMismatch {
            context: context.to_string(),
            expected,
            found,
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
