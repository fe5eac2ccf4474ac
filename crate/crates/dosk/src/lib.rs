//! Double sparsity kernel (DOSK) learning.
//!
//! Fits kernel regression/classification models that are simultaneously sparse
//! in the dual coefficients α (few support points are kept) and in a per-variable
//! kernel weight vector w ∈ [0,1]^p (irrelevant predictors are screened out).
//! The fitted function has the representer form
//!
//! ```text
//! f(x) = Σ_j α_j K_w(x_j, x) + b
//! ```
//!
//! where `K_w` is a variable-weighted kernel, and the training objective is
//!
//! ```text
//! (1/n) Σ_i L(y_i, f(x_i)) + λ₁‖α‖₁ + λ₂‖w‖₁ + λ₃ αᵀ K_w α,   w ∈ [0,1]^p.
//! ```
//!
//! The optimizer alternates an α-step (coordinate descent or accelerated
//! proximal gradient), an exact/bisection b-step, and a w-step that minimizes a
//! local linearization of the kernel over the box, guarded by an Armijo line
//! search so the objective never increases.
//!
//! Modules:
//! - [`kernel`]: weighted kernel families, grams, gradients, linearization.
//! - [`loss`]: squared error, huberized hinge, and deviance losses.
//! - [`solver`]: the alternating optimizer and its individual steps.
//! - [`model`]: fit/predict lifecycle, cross-validation, persistence.
//! - [`simdata`]: seeded simulation designs, standardization, metrics, CSV I/O.
//! - [`cli`]: the `dosk` command-line surface and the benchmark harness.

pub mod cli;
pub mod kernel;
pub mod loss;
pub mod model;
pub mod simdata;
pub mod solver;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid label {0}: margin losses require labels in {{+1, -1}}")]
    InvalidLabel(f64),
    #[error("degenerate labels: both classes must be present")]
    MissingClass,
    #[error("empty data: {0}")]
    EmptyData(&'static str),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error(
        "alpha step failed to reach KKT residual {residual:.3e} <= 1e-6 after {iters} iterations"
    )]
    AlphaStepDiverged {
        iters: usize,
        residual: f64,
        /// Last iterate, for diagnostics.
        alpha: Vec<f64>,
    },
    #[error(
        "w step failed to reach projected-gradient norm {pg_norm:.3e} <= 1e-6 after {iters} iterations"
    )]
    WStepDiverged { iters: usize, pg_norm: f64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("model file field `{field}`: {message}")]
    ModelField { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to: 2 for data/configuration
    /// problems, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AlphaStepDiverged { .. } | Error::WStepDiverged { .. } | Error::NonFinite(_) => {
                3
            }
            _ => 2,
        }
    }
}
