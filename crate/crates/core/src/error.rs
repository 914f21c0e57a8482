use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The document does not have the expected structure.
    #[error("schema error: {0}")]
    Schema(String),

    /// The document parsed, but violates a model invariant.
    #[error("validation error in `{context}`: {message}")]
    Validation { context: String, message: String },

    #[error("missing value for feature `{0}`")]
    MissingFeature(String),

    #[error("target type error: {0}")]
    TargetType(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("covariance matrix is singular: {0}")]
    Singularity(String),

    #[error("build error: {0}")]
    Build(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("enumeration too large: {0}")]
    Size(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True when the error was caused by the caller's documents or arguments
    /// rather than by the engine itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Validation { .. }
                | Error::MissingFeature(_)
                | Error::TargetType(_)
                | Error::EmptyData(_)
                | Error::Singularity(_)
                | Error::Build(_)
                | Error::Argument(_)
                | Error::Size(_)
                | Error::Io(_)
        )
    }

    /// Machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation { .. } => "validation",
            Error::MissingFeature(_) => "missing_feature",
            Error::TargetType(_) => "target_type",
            Error::EmptyData(_) => "empty_data",
            Error::Singularity(_) => "singularity",
            Error::Build(_) => "build",
            Error::Argument(_) => "argument",
            Error::Size(_) => "size",
            Error::InvalidModel(_) => "invalid_model",
            Error::Numerical(_) => "numerical",
            Error::Decode(_) => "decode",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
        }
    }

    /// The feature or field the error refers to, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Validation { context, .. } => Some(context),
            Error::MissingFeature(name) => Some(name),
            _ => None,
        }
    }
}
