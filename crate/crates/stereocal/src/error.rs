use std::path::PathBuf;

use stereocal_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    /// Attaches the path of the file being read.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File { path: path.into(), source: Box::new(self) }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => EXIT_USAGE,
            Error::File { source, .. } => source.exit_code(),
            Error::Core(e) => core_exit_code(e),
            Error::Io { .. } | Error::Image { .. } | Error::Parse { .. } | Error::Data(_) | Error::Csv(_) => EXIT_DATA,
        }
    }
}

fn core_exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidInput(_)
        | CoreError::BoardCountMismatch { .. }
        | CoreError::NoMatchingBoard { .. }
        | CoreError::NoValidSubsequence { .. }
        | CoreError::Runner(_)
        | CoreError::Scene(_) => EXIT_DATA,
        CoreError::DegenerateFit(_)
        | CoreError::DegenerateIntersection { .. }
        | CoreError::SingularMatrix { .. }
        | CoreError::Convergence { .. }
        | CoreError::BehindCamera { .. }
        | CoreError::InitFailure(_)
        | CoreError::OptimizationFailure(_)
        | CoreError::SearchFailure(_) => EXIT_NUMERICAL,
    }
}

impl From<Error> for CoreError {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(c) => c,
            other => CoreError::Runner(other.to_string()),
        }
    }
}
