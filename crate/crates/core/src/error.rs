//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Incompatible dimensions or grids between operands.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Problem data violates a structural invariant (named field).
    #[error("invalid value for {field}: {message}")]
    InvalidValue { field: String, message: String },

    /// The implicit step matrix could not be factored at the given node.
    #[error("singular step matrix at node {node}")]
    StepSingular { node: usize },

    /// A control violates the control-set constraint beyond tolerance.
    #[error("control infeasible: {detail}")]
    Infeasible { detail: String },

    /// The supplied pair fails the optimality certificate required by the
    /// sensitivity formulas.
    #[error("input pair is not optimal: certificate residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    NotOptimal { residual: f64, tol: f64 },

    /// Requested a closed-form solution outside its region of validity.
    #[error("initial state outside the reachable region: quadratic value {quadratic_value:.6}")]
    OutsideRegion { quadratic_value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
