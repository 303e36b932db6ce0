use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which VEM step raised a numerical error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Init,
    EW,
    ES,
    EZ,
    M,
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Step::Init => "init",
            Step::EW => "E-W",
            Step::ES => "E-S",
            Step::EZ => "E-Z",
            Step::M => "M",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {what} at {location}: {message}")]
    Parse {
        what: String,
        location: String,
        message: String,
    },

    #[error("unsupported parameter file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("non-finite value in {step} step (iteration {iteration}, frame {frame}, source {source_index})")]
    Numerical {
        step: Step,
        iteration: usize,
        frame: usize,
        source_index: usize,
    },

    #[error("non-finite loss for sequence {sequence}")]
    NonFiniteLoss { sequence: usize },

    #[error("training diverged at epoch {epoch}, batch {batch} (sequence {sequence})")]
    Diverged {
        epoch: usize,
        batch: usize,
        sequence: usize,
    },

    #[error("degenerate observation: {0}")]
    DegenerateObservation(String),

    #[error("cannot initialize tracking: {0}")]
    Init(String),

    #[error("empty ground truth: metrics are undefined")]
    EmptyGroundTruth,

    #[error("frame range mismatch: {0}")]
    FrameRange(String),

    #[error("trajectory generation failed after {0} attempts")]
    Sampling(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        what: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            what: what.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
