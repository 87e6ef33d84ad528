use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, used to tag errors raised during a registration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rigid,
    Coarse,
    Fine,
    Extremities,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Rigid => "rigid",
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
            Stage::Extremities => "extremities",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("label count mismatch: expected {expected}, found {found}")]
    LabelCount { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("correspondence mismatch: {0}")]
    CorrespondenceMismatch(String),

    #[error("too many components: requested {requested}, at most {max}")]
    TooManyComponents { requested: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("under-constrained system: {active} active rows for {unknowns} unknowns")]
    UnderConstrained { active: usize, unknowns: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("part {0} is not connected")]
    DisconnectedPart(usize),

    #[error("part {0} has no boundary vertices")]
    EmptyBoundary(usize),

    #[error("model file: bad magic or version")]
    BadMagic,

    #[error("model file truncated")]
    Truncated,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerical solvers, as opposed to bad input data.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::UnderConstrained { .. } | Error::Singular(_) => true,
            Error::Stage { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
