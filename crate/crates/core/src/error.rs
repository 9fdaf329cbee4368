use std::fmt;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A scalar input is out of its legal range.
    #[error("invalid value for `{field}`: {message}")]
    InvalidField { field: String, message: String },

    /// A required field was not supplied and has no default.
    #[error("{0} required")]
    MissingField(String),

    /// The inputs are individually legal but jointly inconsistent
    /// (for instance an average conditional variance above the marginal one).
    #[error("invalid design inputs: {0}")]
    InvalidInputs(String),

    /// Expectations over X cannot be computed with what was supplied.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset failed validation: {}", ViolationList(.0))]
    Validation(Vec<Violation>),

    #[error("empty or undersized arm: {0}")]
    EmptyArm(String),

    #[error("singular least-squares fit: column `{column}` is linearly dependent on the others")]
    SingularFit { column: String },

    #[error("logistic fit did not converge after {iterations} iterations{}", if *.separation { " (separation detected)" } else { "" })]
    NonConvergence {
        iterations: usize,
        separation: bool,
        last_iterate: Vec<f64>,
    },

    #[error("degenerate variance ratio: {0}")]
    DegenerateRatio(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("non-finite intermediate: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the
    /// caller's inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularFit { .. }
                | Error::NonConvergence { .. }
                | Error::DegenerateRatio(_)
                | Error::DivisionByZero(_)
                | Error::NonFinite(_)
        )
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
