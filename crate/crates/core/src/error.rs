use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("adjacency not symmetric: a[{i}][{j}] = {aij} but a[{j}][{i}] = {aji}")]
    AsymmetricAdjacency {
        i: usize,
        j: usize,
        aij: f64,
        aji: f64,
    },

    #[error("adjacency has a self-loop at agent {0}")]
    SelfLoop(usize),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("grounded Laplacian is not positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("factorization failed even with jitter {jitter:e} (condition estimate {condition:e})")]
    Factorization { jitter: f64, condition: f64 },

    #[error("variance must be strictly positive, got {0:e}")]
    NonPositiveVariance(f64),

    #[error(
        "covering bound is vacuous: r_omega*sqrt(m)/(2 rho) = {ratio} < 1; choose a smaller rho"
    )]
    VacuousCovering { ratio: f64 },

    #[error("invalid bound parameters: {0}")]
    InvalidBoundParams(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("missing prediction for agent {0} in a learning mode")]
    MissingPrediction(usize),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("invalid control gains: {0}")]
    InvalidGains(String),

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("divergence at step {step} (t = {time}): {reason}")]
    Divergence {
        step: usize,
        time: f64,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Validation failures map to exit code 2, runtime failures to 1.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Divergence { .. }
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Factorization { .. }
                | Error::NonFinite(_)
        )
    }
}
