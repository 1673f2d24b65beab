use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("empty risk set at subject time {time}")]
    EmptyRiskSet { time: f64 },

    #[error("jackknife needs two subjects")]
    JackknifeTooSmall,

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("rank-deficient design")]
    RankDeficient,

    #[error("divergent linear predictor")]
    DivergentPredictor,

    #[error("no convergence after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        /// Last iterate, for diagnostics.
        last: Vec<f64>,
    },

    #[error("indefinite cumulative information")]
    IndefiniteInformation,

    #[error("singular information matrix")]
    SingularInformation,

    #[error("monotone likelihood after {iterations} iterations (loglik {loglik}); covariates may separate events")]
    MonotoneLikelihood { iterations: usize, loglik: f64 },

    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("checksum mismatch: expected {expected}, computed {computed}")]
    Checksum { expected: String, computed: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("asymmetric matrix `{field}` (max asymmetry {asymmetry:e})")]
    AsymmetricMatrix { field: String, asymmetry: f64 },

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
