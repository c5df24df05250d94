use std::path::{Path, PathBuf};

use jamsense_core as core;

/// Errors raised by file formats, pipelines and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid user-supplied configuration or arguments.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    /// A checkpoint or dataset failed an integrity check.
    #[error("{path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: u64, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub fn corrupt(path: &Path, msg: impl Into<String>) -> Self {
        Self::Corrupt {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for everything
    /// that went wrong at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Core(core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Reads a JSON configuration file. Unreadable or invalid files are
/// configuration errors.
pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), e.line())))
}
