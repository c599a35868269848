use thiserror::Error;

/// Errors raised by the capacity engines and their supporting models.
#[derive(Debug, Error)]
pub enum FtnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The Gram matrix is too close to singular for a stable inverse.
    #[error(
        "Gram matrix is ill-conditioned: min eigenvalue {min_eigenvalue:e} < {cond_tol:e} x max eigenvalue {max_eigenvalue:e}"
    )]
    IllConditioned {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
        cond_tol: f64,
    },

    /// delta * (1 + beta) < 1 was requested.
    #[error("delta*(1+beta) = {product} < 1 (delta = {delta}, beta = {beta}) is not supported")]
    MazoRegion { delta: f64, beta: f64, product: f64 },

    #[error("no component has a strictly positive gain")]
    NoPositiveGain,

    #[error("weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("requested dimension {requested} exceeds cap {cap}")]
    DimensionCap { requested: usize, cap: usize },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("folded spectrum vanishes at interior frequency {frequency}")]
    SpectrumZero { frequency: f64 },

    #[error("grid of {points} points too coarse: refinement moved capacity by {change:e} (threshold {threshold:e})")]
    GridTooCoarse {
        points: usize,
        change: f64,
        threshold: f64,
    },

    #[error("oracle did not converge after {iterations} iterations (best objective {best})")]
    NotConverged { best: f64, iterations: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("realization {index} (seed {seed}) failed: {source}")]
    Realization {
        index: u64,
        seed: u64,
        #[source]
        source: Box<FtnError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FtnError>;
