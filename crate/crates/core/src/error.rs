use thiserror::Error;

/// Errors raised by the plant model, the controller and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("power infeasible: requested {power_w:.1} W exceeds pack capability {max_w:.1} W")]
    PowerInfeasible { power_w: f64, max_w: f64 },

    #[error("model validity: {0}")]
    ModelValidity(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("cycle error: {0}")]
    Cycle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} is not finite ({value})")))
    }
}
