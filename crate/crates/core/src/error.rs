use thiserror::Error;

/// Errors raised by data validation and by the inference procedures.
///
/// Every variant maps to a stable upper-case code via [`Error::code`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unbalanced panel: unit {unit} has no outcome for period {period}")]
    Unbalanced { unit: usize, period: usize },
    #[error("no treated units")]
    NoTreated,
    #[error("every unit is treated; at least one control is required")]
    NoControls,
    #[error("post-treatment periods must be a non-empty block at the end of the sample")]
    NonSuffixPost,
    #[error("no pre-treatment periods; use the cross-section reduction instead")]
    NoPre,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("unit sizes are all equal; variance model is not identified")]
    Collinear,
    #[error("clusters are not balanced: {0}")]
    BesterBalance(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("method {method} failed on {failed} of {reps} replications")]
    StudyFailed { method: String, failed: u64, reps: u64 },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Unbalanced { .. } => "UNBALANCED",
            Error::NoTreated => "NO_TREATED",
            Error::NoControls => "NO_CONTROLS",
            Error::NonSuffixPost => "NON_SUFFIX_POST",
            Error::NoPre => "NO_PRE",
            Error::Invalid(_) => "INVALID",
            Error::Degenerate(_) => "DEGENERATE",
            Error::SingularDesign => "SINGULAR_DESIGN",
            Error::Collinear => "COLLINEAR",
            Error::BesterBalance(_) => "BESTER_BALANCE",
            Error::Input(_) => "INPUT",
            Error::StudyFailed { .. } => "STUDY_FAILED",
        }
    }

    /// True for problems with the supplied data rather than with a procedure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Unbalanced { .. }
                | Error::NoTreated
                | Error::NoControls
                | Error::NonSuffixPost
                | Error::Input(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
