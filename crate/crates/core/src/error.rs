use thiserror::Error;

/// Failures surfaced by estimation, variance computation and testing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:.3e}, tolerance {tolerance:.3e})")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPd { pivot: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("focal covariates are collinear with the fixed effects or each other: {}", columns.join(", "))]
    CollinearFocal { columns: Vec<String> },

    #[error("coefficients are not identified without cluster {cluster} (leave-one-out Gram matrix is rank deficient)")]
    ClusterIdentification { cluster: String },

    #[error(
        "absorbed-shortcut requires W = inverse working covariance (max deviation {deviation:.3e})"
    )]
    ShortcutInvalid { deviation: f64 },

    #[error("adjustment matrix for cluster {cluster} is singular")]
    SingularAdjustment { cluster: String },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("estimated degrees of freedom {eta:.4} too small for a {q}-dimensional test (need > {})", q - 1)]
    DegreesOfFreedomTooSmall { eta: f64, q: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
