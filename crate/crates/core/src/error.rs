use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Schur stable (iteration diverged)")]
    NonStable,

    #[error("Riccati iteration found no stabilizing solution: {0}")]
    NoStabilizingSolution(String),

    #[error("resolvent is singular: e^(j{omega}) is an eigenvalue")]
    SingularResolvent { omega: f64 },

    #[error("closed loop is not Schur stable")]
    UnstableLoop,

    #[error("nominal loop is unstable")]
    UnstableNominal,

    #[error("controller cannot be represented in the requested form: {0}")]
    NotRepresentable(String),

    #[error("rollout diverged: state norm exceeded {limit:e} at step {step}")]
    Overflow { step: usize, limit: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("margin verification failed: {0}")]
    MarginVerification(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
