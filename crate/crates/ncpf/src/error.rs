use std::io;
use std::path::{Path, PathBuf};

use ncpf_core::ErrorKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    /// A file that parsed but does not hold what it claims to.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    /// A core error raised while handling a specific file.
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: ncpf_core::Error },
    #[error(transparent)]
    Core(#[from] ncpf_core::Error),
    #[error("{0}")]
    Numeric(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn in_file(path: &Path, source: ncpf_core::Error) -> Self {
        Error::InFile { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } | Error::Format { .. } => ErrorKind::Data,
            Error::InFile { source, .. } | Error::Core(source) => source.kind(),
            Error::Numeric(_) => ErrorKind::Numeric,
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.kind())
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Error::Io { path, .. }
            | Error::Json { path, .. }
            | Error::Csv { path, .. }
            | Error::Format { path, .. }
            | Error::InFile { path, .. } => Some(path),
            _ => None,
        }
    }

    /// The machine-readable form printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = serde_json::json!({
            "kind": kind_name(self.kind()),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let Some(p) = self.path() {
            body["path"] = p.display().to_string().into();
        }
        serde_json::json!({ "error": body })
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

pub fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}
