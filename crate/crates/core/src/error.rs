use thiserror::Error;

/// Errors produced by the modelling, controller, and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("ill-posed interconnection: {0}")]
    IllPosed(String),

    #[error("equilibrium equation unsolvable ({which}): residual {residual:.3e}")]
    EquilibriumUnsolvable { which: &'static str, residual: f64 },

    #[error("trajectory diverged at t = {t}")]
    Diverged {
        t: f64,
        partial: crate::closed_loop::Trajectory,
    },

    #[error("decay-rate fit window is empty")]
    EmptyWindow,

    #[error("iteration limit reached in {0}")]
    NoConvergence(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
