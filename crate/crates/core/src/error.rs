use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lookup failed: no {what} for {key}")]
    Lookup { what: &'static str, key: String },

    #[error("vignette library schema error: {0}")]
    Schema(String),

    #[error("{path}: JSON error at line {line}, column {column}: {message}")]
    JsonAt {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("template error: unresolved placeholder {0}")]
    Template(String),

    #[error("response parse error: {0}")]
    ResponseParse(String),

    #[error("response range error: {field} = {value} outside {allowed}")]
    ResponseRange {
        field: &'static str,
        value: String,
        allowed: &'static str,
    },

    #[error("transport error after {attempts} attempt(s): {message} (last status: {status:?})")]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("credential error: {var} is missing or was rejected by the provider")]
    Credential { var: String },

    #[error("data error{}: field {field}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data {
        row: Option<usize>,
        field: &'static str,
        message: String,
    },

    #[error("dataset schema v{expected} mismatch: {message}")]
    DatasetSchema { expected: u32, message: String },

    #[error("collinear design: column(s) {columns:?} are linearly dependent on earlier columns")]
    Collinearity { columns: Vec<String> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bootstrap aborted: {failed} of {total} resamples were rank deficient")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("config hash mismatch (journal {journal}, config {config}); differing keys: {diff}")]
    ConfigMismatch {
        journal: String,
        config: String,
        diff: String,
    },

    #[error("stage `{stage}` requires {requirement}")]
    StageDependency { stage: String, requirement: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json_at(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::JsonAt {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
