use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} out of range: {value} (expected {expected})")]
    Range {
        field: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("identifier error: {0}")]
    Identifier(String),
    #[error("line {line}, field `{field}`: {message}")]
    Format {
        line: u64,
        field: String,
        message: String,
    },
    #[error("empty collection: {0}")]
    EmptyCollection(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("size error: {0}")]
    Size(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("packing error: {0}")]
    Packing(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(line: u64, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (as opposed to IO or internal failures).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
