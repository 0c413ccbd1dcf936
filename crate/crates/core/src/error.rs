use thiserror::Error;

/// Errors raised by the numerical engines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions of the inputs are inconsistent.
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A numerical procedure broke down (singular pivot, non-convergence).
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Inconsistent or degenerate configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The grid of a grid posterior does not contain the posterior mass.
    #[error(
        "grid bounds too narrow: boundary mass ratio {boundary_mass:e}; try bounds {suggested:?}"
    )]
    GridBounds {
        boundary_mass: f64,
        suggested: Vec<(f64, f64)>,
    },

    /// A Langevin chain produced a non-finite drift or state.
    #[error("chain aborted at step {step}: non-finite drift or state")]
    NonFinite {
        step: usize,
        last_state: Vec<f64>,
        exit_step: Option<usize>,
    },

    /// A functional was requested that was not registered before the run.
    #[error("unknown functional `{0}`")]
    UnknownFunctional(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
