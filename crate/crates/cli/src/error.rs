use std::path::{Path, PathBuf};

use cikmar_core::backends::BackendError;
use cikmar_core::corpus::CorpusError;
use cikmar_core::prompts::PromptError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("no run outputs in {}", .0.display())]
    NoRunOutputs(PathBuf),
    #[error("{0}")]
    Manifest(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for anything the user can fix by changing inputs or flags, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Corpus(_) | CliError::Prompt(_) | CliError::Manifest(_) => 1,
            CliError::NoRunOutputs(_) => 1,
            _ => 2,
        }
    }
}
