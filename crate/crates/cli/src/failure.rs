//! Errors reported to the shell: a stage name, a message and an exit code.

use std::fmt;
use std::path::Path;

use cnn_rsl::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Sample,
    Train,
    Tune,
    Compare,
    Smooth,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Tune => "tune",
            Stage::Compare => "compare",
            Stage::Smooth => "smooth",
            Stage::Write => "write",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Input,
    Tuning,
    Divergence,
}

#[derive(Debug)]
pub struct Failure {
    pub stage: Stage,
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind: Kind::Input,
            message: message.into(),
        }
    }

    /// Classifies a library error raised during `stage`.
    pub fn from_error(stage: Stage, err: Error) -> Self {
        let kind = match err.root() {
            Error::Tuning(_) => Kind::Tuning,
            Error::Divergence { .. } => Kind::Divergence,
            _ => Kind::Input,
        };
        Self {
            stage,
            kind,
            message: err.to_string(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Stage::Write, format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Input => 2,
            Kind::Tuning => 3,
            Kind::Divergence => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "error in stage '{}': {}",
            self.stage.as_str(),
            self.message
        )
    }
}

/// Shorthand for mapping library results onto a stage.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> AtStage<T> for cnn_rsl::Result<T> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure::from_error(stage, e))
    }
}
