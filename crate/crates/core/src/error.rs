use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("eigendecomposition did not converge within {iterations} QR sweeps")]
    NoConvergence { iterations: usize },

    /// The matrix has a complex conjugate eigenvalue pair. Callers in the
    /// decomposition treat this as a signal to redraw their contractions.
    #[error("complex eigenvalue pair {re} ± {im}i")]
    ComplexEigenvalues { re: f64, im: f64 },

    #[error("defective matrix: eigenvalues {0:?} are clustered without independent eigenvectors")]
    Defective(Vec<f64>),

    #[error("k-rank enumeration needs {count} subsets but the budget is {budget}; use sampled mode")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rank deficient: sigma_R/sigma_1 = {ratio:e} is below the noise floor {floor:e} (spectrum {spectrum:?})")]
    RankDeficient {
        ratio: f64,
        floor: f64,
        spectrum: Vec<f64>,
    },

    #[error("retries exhausted after {attempts} attempts ({reason}); last observed separation {sep_observed:e}")]
    RetriesExhausted {
        attempts: usize,
        sep_observed: f64,
        reason: String,
    },

    #[error("orthogonal system construction failed in step {stage}: {detail} (robust dimensions {robust_dims:?})")]
    ConstructionFailed {
        stage: u8,
        detail: String,
        robust_dims: Vec<usize>,
    },

    #[error("degenerate term {term}: {detail}")]
    DegenerateTerm { term: usize, detail: String },

    #[error("ambiguous component matching: {0}")]
    AmbiguousMatching(String),

    #[error("ill-conditioned linear system: sigma_min {sigma_min:e} below {threshold:e}")]
    IllConditioned { sigma_min: f64, threshold: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
