use thiserror::Error;

/// Errors raised by the lattice-gas toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sector too large: {0}")]
    SectorTooLarge(String),

    #[error("window too large: {sites} sites (limit {limit})")]
    WindowTooLarge { sites: usize, limit: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("free energy table is not convex at rho={rho} (second difference {second_difference:e})")]
    NonConvex { rho: f64, second_difference: f64 },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("generator is reducible: {reachable} of {states} states reachable")]
    Reducible { reachable: usize, states: usize },

    #[error("CFL violation: dt={dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("solution left [0,1]: value {value:e} in cell {cell} at t={t}")]
    OutOfRange { value: f64, cell: usize, t: f64 },

    #[error("numerical guard: {0}")]
    Numerical(String),

    #[error("relaxation horizon exhausted: distance {distance:e} > tolerance {tolerance:e} at t={horizon}")]
    HorizonExhausted {
        distance: f64,
        tolerance: f64,
        horizon: f64,
    },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors that come from a numerical guard rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvex { .. }
                | Error::Bracketing(_)
                | Error::Reducible { .. }
                | Error::Cfl { .. }
                | Error::OutOfRange { .. }
                | Error::Numerical(_)
                | Error::HorizonExhausted { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
