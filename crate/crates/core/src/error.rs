use std::path::PathBuf;

use thiserror::Error;

/// Failure category, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Data(String),
    #[error("k too large: k = {k} but the cloud has {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("degenerate neighborhood at vertex {0}")]
    DegenerateNeighborhood(usize),
    #[error("degenerate projection: all points collinear")]
    DegenerateProjection,
    #[error("isolated vertex {0}: not present in any triangle")]
    IsolatedVertex(usize),
    #[error("degenerate face {0}")]
    DegenerateFace(usize),
    #[error("non-manifold edge ({0}, {1}) has more than two incident faces")]
    NonManifoldEdge(usize, usize),
    #[error("system singular: check point cloud connectivity/boundary ({0})")]
    Singular(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("folded boundary: parameterization invalid for meshing")]
    FoldedBoundary,
    #[error("weld seam mismatch: duplicate positions differ by {0:e}")]
    SeamMismatch(f64),
    #[error("welding failed: {0}")]
    Welding(String),
    #[error("invalid Möbius data: {0}")]
    Mobius(String),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Data(_) | Error::KTooLarge { .. } | Error::DegenerateFace(_) | Error::NonManifoldEdge(..) | Error::Parse { .. } | Error::Io { .. } => {
                ErrorKind::Data
            }
            Error::DegenerateNeighborhood(_)
            | Error::DegenerateProjection
            | Error::IsolatedVertex(_)
            | Error::Singular(_)
            | Error::NonFinite(_)
            | Error::FoldedBoundary
            | Error::SeamMismatch(_)
            | Error::Welding(_)
            | Error::Mobius(_) => ErrorKind::Numerical,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
