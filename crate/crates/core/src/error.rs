use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A non-finite value (NaN or ±inf) was found in an input.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The design matrix does not have full column rank. `columns` lists the
    /// indices whose R-factor diagonal collapsed (the likely culprits).
    #[error("design matrix is rank deficient; suspect columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    /// A coefficient index is outside `0..k`.
    #[error("coefficient index {index} out of range for {n_cols} columns")]
    IndexOutOfRange { index: usize, n_cols: usize },

    /// A residualized regressor is numerically zero, so partial quantities
    /// are undefined.
    #[error("residualized regressor is numerically zero")]
    ZeroVector,

    /// An adjustment factor 1/(1-h) was requested at h >= 1.
    #[error("leverage {leverage} at observation {index} leaves the adjustment factor undefined")]
    DivisionDomain { index: usize, leverage: f64 },

    /// Every observation has leverage one; nothing remains for the variance.
    #[error("all observations have leverage one; variance is undefined")]
    AllOmitted,

    /// A leave-one-out fit is singular (the observation has leverage one).
    #[error("leave-one-out fit is singular at observation {index}")]
    SingularLeaveOneOut { index: usize },

    /// Degrees of freedom must be strictly positive.
    #[error("degrees of freedom must be positive, got {dof}")]
    DomainError { dof: f64 },

    /// A degrees-of-freedom rule produced a non-positive value.
    #[error("degrees-of-freedom rule produced non-positive value {dof}")]
    NonPositiveDof { dof: f64 },

    /// A standard error of zero makes the t statistic undefined.
    #[error("standard error is zero; t statistic undefined")]
    ZeroSe,

    /// The original-sample t statistic of a bootstrap run is undefined.
    #[error("original t statistic undefined (zero standard error)")]
    DegenerateT,

    /// The Satterthwaite moment matrix has zero trace.
    #[error("moment matrix has zero trace; Satterthwaite dof undefined")]
    DegenerateB,

    /// All residuals are zero; there is nothing to model.
    #[error("all residuals are zero; cannot calibrate a variance model")]
    DegenerateTarget,

    /// A sample standard deviation needed for scaling is zero.
    #[error("sample standard deviation is zero")]
    ZeroVariance,

    /// (B+1)·level must be an integer for exact bootstrap size.
    #[error("(B+1)*level must be an integer for exact size, got B={b}, level={level}")]
    InvalidB { b: usize, level: f64 },

    /// An input collection is empty.
    #[error("empty input: {context}")]
    EmptyInput { context: String },

    /// Two inputs have incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
