use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate cell problem: {0}")]
    Degenerate(String),

    #[error("tensor assembly: {0}")]
    Assembly(String),

    #[error("invariant violated at t = {t}: {message}")]
    Invariant { t: f64, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used in error records written by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Parameter(_) => "parameter",
            Error::State(_) => "state",
            Error::Solver { .. } => "solver",
            Error::Degenerate(_) => "degenerate",
            Error::Assembly(_) => "assembly",
            Error::Invariant { .. } => "invariant",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
