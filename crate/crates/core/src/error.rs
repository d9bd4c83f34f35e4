use thiserror::Error;

/// Errors raised by the laboratory's numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension must be at least 3, got {0}")]
    Dimension(usize),

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("point lies outside the domain: {0}")]
    OutsideDomain(String),

    #[error("coincident points in Green function evaluation")]
    CoincidentPoints,

    #[error("radii are not strictly ordered: {0}")]
    UnorderedRadii(String),

    #[error("sigma is outside the admissible set: <grad a(xi0), sigma_1> = {0} must be positive")]
    OutsideAdmissible(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty evaluation grid")]
    EmptyGrid,

    #[error("singular matrix")]
    Singular,

    #[error("ODE solution blew up at r = {radius}")]
    BlowUp { radius: f64 },

    #[error("no bracket found for {nodes} interior nodes; scanned (slope, nodes): {table:?}")]
    NoBracket { nodes: usize, table: Vec<(f64, usize)> },

    #[error("not enough valid points for a fit: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositive { name, value })
    }
}

pub(crate) fn same_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
