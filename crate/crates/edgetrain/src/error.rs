//! Error type shared across the crate.

use std::fmt;

/// Errors produced by the tensor engine, the training loop and the planners.
#[derive(Debug)]
pub enum Error {
    /// Operand dimensions do not line up (GEMM inner extents, tensor ranks, ...).
    Shape(String),
    /// Convolution geometry produces no valid output extent.
    Geometry(String),
    /// Invalid configuration: unknown cut name, bad plan, malformed profile.
    Config(String),
    /// Required training state is missing (e.g. no tape saved for a layer).
    State(String),
    /// Out-of-range argument (e.g. class label beyond the logit count).
    Argument(String),
    /// A single tile does not fit the L1 budget; the layer cannot be scheduled.
    Infeasible(String),
    /// File could not be parsed as a descriptor / profile / replay store.
    Parse(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Geometry(m) => write!(f, "geometry error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Infeasible(m) => write!(f, "infeasible: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Process exit code for the CLI: configuration-class problems exit with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Argument(_) => 2,
            _ => 1,
        }
    }
}
