use std::path::PathBuf;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("singular fit: collinear columns [{}]", .columns.join(", "))]
    SingularFit { columns: Vec<String> },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("coverage error: {count} missing keys, first {first}")]
    Coverage { count: usize, first: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short code used by the CLI and the C interface.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Io { .. } => "io",
            Error::Schema(_) => "schema",
            Error::Shape(_) => "shape",
            Error::SingularFit { .. } => "singular_fit",
            Error::Singular(_) => "singular",
            Error::Config(_) => "config",
            Error::MissingArtifacts(_) => "missing_artifacts",
            Error::Coverage { .. } => "coverage",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
