use std::path::{Path, PathBuf};

/// Failures while reading or writing pipeline artifacts.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },
    #[error("corrupt checkpoint tensor `{tensor}`: {msg}")]
    CorruptTensor { tensor: String, msg: String },
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] udgen_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn malformed(path: &Path, msg: impl std::fmt::Display) -> FormatError {
    FormatError::Malformed {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| malformed(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| malformed(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}
