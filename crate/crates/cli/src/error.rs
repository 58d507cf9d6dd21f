use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("path not found: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] groupfield::dataset::DatasetError),
    #[error(transparent)]
    Scale(#[from] groupfield::scale::ScaleError),
    #[error(transparent)]
    Synth(#[from] groupfield::synth::SynthError),
    #[error(transparent)]
    Train(#[from] groupfield::train::TrainError),
    #[error(transparent)]
    Field(#[from] groupfield::field::FieldError),
    #[error(transparent)]
    Checkpoint(#[from] groupfield::field::checkpoint::CheckpointError),
    #[error(transparent)]
    Decompose(#[from] groupfield::decompose::DecomposeError),
    #[error(transparent)]
    Tree(#[from] groupfield::tree::TreeError),
    #[error(transparent)]
    Eval(#[from] groupfield::eval::EvalError),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn read(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            Self::MissingPath(path.to_path_buf())
        } else {
            Self::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn write(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 when an input path does not exist, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::MissingPath(_) => 2,
            _ => 1,
        }
    }
}

/// Fail early with `MissingPath` rather than deep inside a reader.
pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath(path.to_path_buf()))
    }
}
