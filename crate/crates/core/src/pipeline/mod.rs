//! Config-driven experiment runs.
//!
//! Each stage reads the previous stages' files from the output directory
//! and writes plain JSON/CSV, so any stage can be rerun or inspected alone.

pub mod config;
pub mod manifest;
mod stages;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::annotations::AnnotationError;
use crate::context::ContextError;
use crate::facesources::FaceSourceError;
use crate::fusion::FusionError;
use crate::metrics::MetricsError;

pub use config::{IntegrationMode, LlmProfile, LoadedConfig, RunConfig, HUMAN_CONTEXT};
pub use manifest::RunManifest;
pub use stages::{Pipeline, Stage};

pub const LOCK_FILE: &str = ".cuefuse.lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Annotations { path: PathBuf, source: AnnotationError },
    #[error(transparent)]
    FaceSource(#[from] FaceSourceError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },
    #[error("{}: {message}", path.display())]
    BadInput { path: PathBuf, message: String },
    #[error("output directory {} is locked by another run (remove {LOCK_FILE} if stale)", .0.display())]
    Locked(PathBuf),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Locked(_) => 2,
            Self::Annotations { .. }
            | Self::FaceSource(_)
            | Self::Metrics(_)
            | Self::Io { .. }
            | Self::MissingInput { .. }
            | Self::BadInput { .. } => 3,
            Self::Context(e) => match e {
                ContextError::TransportError { .. } | ContextError::TooManyParseFailures { .. } => 4,
                ContextError::CacheCorrupt(_) => 3,
                ContextError::InvalidConfig(_) | ContextError::Prompt(_) => 2,
            },
            Self::Fusion(FusionError::DegenerateFusion(_)) => 5,
            Self::Fusion(_) => 2,
            Self::Invariant(_) => 5,
        }
    }
}

/// Single-instance guard for an output directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(output_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(output_dir).map_err(|e| PipelineError::io(output_dir, e))?;
        let path = output_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(output_dir.to_path_buf())),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunLock::acquire(dir.path()).unwrap();
        let second = RunLock::acquire(dir.path());
        assert!(matches!(second, Err(PipelineError::Locked(_))));
        assert_eq!(second.unwrap_err().exit_code(), 2);
        drop(first);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Invariant("x".into()).exit_code(), 5);
        let e = PipelineError::Context(ContextError::TooManyParseFailures {
            model: "m".into(),
            failures: 5,
            n_samples: 20,
        });
        assert_eq!(e.exit_code(), 4);
        let e = PipelineError::Annotations {
            path: "a.csv".into(),
            source: AnnotationError::EmptyGroup,
        };
        assert_eq!(e.exit_code(), 3);
    }
}
