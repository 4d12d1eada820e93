//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the synthesis, preprocessing, tensor, model, and IO layers.
#[derive(Debug)]
pub enum Error {
    /// A numeric argument is outside the mathematical domain of an operation.
    Domain(String),
    /// An input carries no usable information (e.g. a constant spectrum).
    DegenerateInput(String),
    /// A vector had the wrong length.
    Length { expected: usize, got: usize, what: String },
    /// Tensor shapes do not line up.
    Shape(String),
    /// Batch statistics are undefined for this batch size.
    DegenerateBatch(String),
    /// The gradient graph was used incorrectly.
    Graph(String),
    /// A configuration violates its invariants.
    Config(String),
    /// Targets or heads do not match the model case.
    Arity(String),
    /// A non-finite value appeared during computation.
    NonFinite(String),
    /// A serialized artifact is malformed; `offset` is the byte position where decoding failed.
    Format { offset: u64, msg: String },
    /// A serialized artifact has an unknown magic or version.
    Version(String),
    /// A saliency window does not intersect the grid.
    Window(String),
    /// Underlying IO failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::DegenerateInput(m) => write!(f, "degenerate input: {m}"),
            Error::Length { expected, got, what } => {
                write!(f, "length error: {what}: expected {expected}, got {got}")
            }
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::DegenerateBatch(m) => write!(f, "degenerate batch: {m}"),
            Error::Graph(m) => write!(f, "graph error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Arity(m) => write!(f, "arity error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Format { offset, msg } => write!(f, "format error at byte {offset}: {msg}"),
            Error::Version(m) => write!(f, "version error: {m}"),
            Error::Window(m) => write!(f, "window error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format { offset: 0, msg: format!("json: {e}") }
    }
}

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 IO, 4 numeric, 5 compatibility, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Domain(_)
            | Error::Length { .. }
            | Error::DegenerateInput(_)
            | Error::Window(_) => 2,
            Error::Io(_) => 3,
            Error::NonFinite(_) | Error::DegenerateBatch(_) => 4,
            Error::Version(_) | Error::Arity(_) | Error::Format { .. } => 5,
            Error::Shape(_) | Error::Graph(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
