use thiserror::Error;

pub type Result<T> = std::result::Result<T, GdmError>;

#[derive(Debug, Error)]
pub enum GdmError {
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("rank-deficient covariates: column '{column}' {reason}")]
    RankDeficient { column: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular system in {context} (condition estimate {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("labels are not standardized (mean {mean:.3e}, variance {variance:.6})")]
    NotStandardized { mean: f64, variance: f64 },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible sampling request: {0}")]
    Infeasible(String),

    #[error("degenerate pattern: predictions have zero variance")]
    DegeneratePattern,

    #[error("inconsistent label coding at site '{site}': {detail}")]
    LabelCoding { site: String, detail: String },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("duplicate subject_id '{0}'")]
    DuplicateId(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GdmError {
    /// True for errors caused by invalid input or configuration rather than
    /// by the computation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            GdmError::Config(_)
                | GdmError::InvalidArgument(_)
                | GdmError::InvalidHyperParams(_)
                | GdmError::InvalidCohort(_)
                | GdmError::DuplicateId(_)
                | GdmError::Parse { .. }
                | GdmError::Csv(_)
                | GdmError::Json(_)
                | GdmError::Io(_)
        )
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            GdmError::DegenerateLabels(_) => "degenerate_labels",
            GdmError::ZeroVariance(_) => "zero_variance",
            GdmError::RankDeficient { .. } => "rank_deficient",
            GdmError::DimensionMismatch { .. } => "dimension_mismatch",
            GdmError::NonFinite(_) => "non_finite",
            GdmError::Singular { .. } => "singular",
            GdmError::NotStandardized { .. } => "not_standardized",
            GdmError::InvalidHyperParams(_) => "invalid_hyperparams",
            GdmError::InvalidArgument(_) => "invalid_argument",
            GdmError::Infeasible(_) => "infeasible",
            GdmError::DegeneratePattern => "degenerate_pattern",
            GdmError::LabelCoding { .. } => "label_coding",
            GdmError::InvalidCohort(_) => "invalid_cohort",
            GdmError::DuplicateId(_) => "duplicate_id",
            GdmError::Parse { .. } => "parse",
            GdmError::Config(_) => "config",
            GdmError::Io(_) => "io",
            GdmError::Csv(_) => "csv",
            GdmError::Json(_) => "json",
        }
    }
}

pub(crate) fn check_dims(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GdmError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn check_finite<'a>(
    context: &'static str,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GdmError::NonFinite(context))
    }
}
