use thiserror::Error;

/// Errors raised by the numerical toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time step {dt:e} violates the CFL bound; use dt <= {max_dt:e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("boundary data must vanish at t = 0 (found |f(0)| = {0:e})")]
    Compatibility(f64),

    #[error("trajectory storage `{0}` does not keep the data this operation needs")]
    Storage(&'static str),

    #[error("forward solve for basis column {column} failed: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("horizon T = {t} does not exceed T_min = {t_min}")]
    Threshold { t: f64, t_min: f64 },

    #[error("assembly quality: {0}")]
    AssemblyQuality(String),

    #[error("degenerate measurement: {0}")]
    Degenerate(String),

    #[error("{max_xi} is the largest representable |xi| on this grid, but gamma = {gamma} was requested")]
    Lattice { gamma: f64, max_xi: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
