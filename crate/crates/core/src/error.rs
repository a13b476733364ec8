use thiserror::Error;

#[derive(Debug, Error)]
pub enum OfoError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("ill-conditioned metric: condition number {0:.3e} exceeds 1e12")]
    IllConditionedMetric(f64),

    #[error("metric is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("degenerate quadratic fit: abscissa must be positive, got {0}")]
    DegenerateFit(f64),

    #[error("invalid qp jacobians: {0}")]
    InvalidJacobians(String),

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OfoError>;
