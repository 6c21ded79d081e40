use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// An edge whose endpoint types disagree with its relation's declaration.
#[derive(Debug, thiserror::Error)]
#[error("edge {src} -> {dst} of relation `{relation}` has endpoint types ({src_type}, {dst_type}), expected ({expected_src}, {expected_dst})")]
pub struct TypeMismatch {
    pub relation: String,
    pub src: String,
    pub dst: String,
    pub src_type: String,
    pub dst_type: String,
    pub expected_src: String,
    pub expected_dst: String,
}

/// Errors raised anywhere in the library.
///
/// [`Error::exit_code`] maps each variant onto the CLI's exit code classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unknown type name `{0}`")]
    UnknownType(String),

    #[error("{0}")]
    TypeMismatch(Box<TypeMismatch>),

    #[error("node id `{0}` is not declared in the schema or node file")]
    DanglingNode(String),

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
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

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// 2 for configuration errors, 3 for data errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
