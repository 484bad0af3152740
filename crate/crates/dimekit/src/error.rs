//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the command line
/// tool: everything that stems from user-supplied data ([`Error::Input`],
/// [`Error::Parse`], [`Error::DegenerateGeometry`]) exits with code 1,
/// internal failures ([`Error::Contract`], [`Error::Numeric`], [`Error::Io`])
/// with code 2.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user input (bad configuration values, missing labels, unknown
    /// elements, empty datasets).
    #[error("input error: {0}")]
    Input(String),

    /// Geometry that makes downstream quantities undefined, e.g. two atoms at
    /// identical positions (basis functions divide by the distance).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A caller violated an API contract. Indicates a bug in the calling
    /// code, not in the data.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Numerical failure at runtime (e.g. the training loss became NaN).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::DegenerateGeometry(_) | Error::Parse { .. } => 1,
            Error::Contract(_) | Error::Numeric(_) | Error::Io(_) => 2,
        }
    }
}
