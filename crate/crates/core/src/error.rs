use thiserror::Error;

/// Errors raised while loading data, fitting models or running estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("treatment value `{value}` at row {row} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("non-finite or non-numeric value `{value}` at row {row}, column `{column}`")]
    NonFiniteValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("treatment arm {0} has no subjects")]
    EmptyArm(u8),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("propensity score {0} outside the open unit interval")]
    DomainError(f64),

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("Newton iterations did not converge after {iterations} steps (max |U| = {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian")]
    SingularJacobian,

    #[error("singular matrix")]
    SingularMatrix,

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("too few observations: {0}")]
    TooFewObservations(String),

    #[error("logistic model shows (quasi-)separation: {0}")]
    Separation(String),

    #[error("no treated subject found a control within the caliper")]
    NoMatches,

    #[error("every stratum lacked one of the treatment arms")]
    AllStrataDropped,

    #[error("zero pooled variance for `{0}`")]
    ZeroVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{failed} of {total} replicates failed for {method}, above the 2% limit")]
    ExcessiveFailures {
        method: String,
        failed: usize,
        total: usize,
    },
}

impl Error {
    /// Short machine-readable tag, used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::MissingColumn(_) => "missing_column",
            Error::NonBinaryTreatment { .. } => "non_binary_treatment",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::EmptyArm(_) => "empty_arm",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::UnknownCovariate(_) => "unknown_covariate",
            Error::DomainError(_) => "domain_error",
            Error::NegativeWeight { .. } => "negative_weight",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularJacobian => "singular_jacobian",
            Error::SingularMatrix => "singular_matrix",
            Error::RankDeficient(_) => "rank_deficient",
            Error::TooFewObservations(_) => "too_few_observations",
            Error::Separation(_) => "separation",
            Error::NoMatches => "no_matches",
            Error::AllStrataDropped => "all_strata_dropped",
            Error::ZeroVariance(_) => "zero_variance",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ExcessiveFailures { .. } => "excessive_failures",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
