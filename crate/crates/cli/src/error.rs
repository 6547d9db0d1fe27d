use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Malformed `.mbgl` content.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not an MBGL matrix file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("ndims must be 2 or 3, got {0}")]
    BadNdims(u8),
    #[error("truncated: need {expected} bytes/values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] mbgl_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, source: FormatError) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    /// 0 success, 1 I/O (including unreadable or corrupt files),
    /// 2 validation, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Format { .. } => 1,
            CliError::Validation(_) => 2,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &mbgl_core::Error) -> i32 {
    use mbgl_core::Error::*;
    match e {
        ForVariable { source, .. } => core_exit_code(source),
        InvalidInput(_)
        | DimensionMismatch(_)
        | IndexOutOfRange { .. }
        | ZeroVarianceSeries { .. }
        | TooFewRealizations { .. }
        | RankDeficient { .. }
        | NotOrthonormal { .. }
        | TooLargeForOracle { .. }
        | DegenerateData(_)
        | FoldTooSmall { .. }
        | ZeroVarianceLocation { .. }
        | MissingStandardization => 2,
        NotPositiveDefinite(_)
        | UnboundedProblem(_)
        | MaxIterationsExceeded { .. }
        | InnerSolverFailure { .. }
        | NonmonotoneObjective { .. }
        | SingularLinearization { .. }
        | OptimizerDiverged
        | NoViableCandidate => 3,
    }
}
