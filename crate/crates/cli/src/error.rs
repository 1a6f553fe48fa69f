use std::path::PathBuf;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing artifact {0}; run the upstream stage first")]
    MissingArtifact(PathBuf),
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: ocda_core::Error },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("output directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl CliError {
    /// 0 success, 2 config error, 3 missing artifact, 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { source: ocda_core::Error::InvalidConfig { .. }, .. } => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Stage { source: ocda_core::Error::NonFinite(_), .. } => 4,
            _ => 1,
        }
    }
}

pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageContext<T> for ocda_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
