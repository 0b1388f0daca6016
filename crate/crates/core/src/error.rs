use thiserror::Error;

/// Error type shared by every solver in the crate.
///
/// The variants map one-to-one onto the failure classes surfaced by the
/// command line front end, which assigns one exit code per class.
#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite or otherwise meaningless numeric input.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration: a type invariant would be violated.
    #[error("configuration error: {0}")]
    Config(String),

    /// A query time does not lie on the lattice.
    #[error("grid alignment error: {0}")]
    Alignment(String),

    /// A solver precondition does not hold for the supplied inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A declared catalog constant is inconsistent with the evaluated
    /// function (for example a bisection bracket that fails to change sign).
    #[error("catalog violation: {0}")]
    Catalog(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {iters} iterations (last delta {last:?})")]
    NonConvergence {
        iters: usize,
        last: Option<f64>,
        diagnostics: Vec<f64>,
    },

    /// Two inputs that must share a shape or a catalog do not.
    #[error("input mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{what} is not finite: {v}")))
    }
}
