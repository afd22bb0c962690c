use std::path::PathBuf;

use ites_core::recognition::RecognitionError;
use ites_core::segmentation::SegmentationError;
use ites_core::session::SessionError;
use ites_core::skillparams::SkillError;
use ites_core::taskmodel::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle not found: {}", .0.display())]
    BundleNotFound(PathBuf),
    /// A manifest field is missing, malformed or points at a missing file.
    #[error("bundle field `{field}`: {message}")]
    Bundle { field: String, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: u64, message: String },
    #[error("session not found: {0}")]
    SessionNotFound(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid generator input: {0}")]
    Generator(String),
    #[error("transcription backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Recognition(#[from] RecognitionError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("task model: {0}")]
    TaskModel(#[from] ParseError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn bundle(field: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Bundle { field: field.into(), message: message.into() }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Error {
        Error::Format { path: path.into(), line, message: message.into() }
    }
}
