use std::fmt;

use canine_core::agreement::AgreementError;
use canine_core::distill::DistillError;
use canine_core::metrics::MetricsError;
use canine_core::study::StudyError;

/// Failure category, which decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Unreadable or malformed input.
    Input,
    /// Invalid configuration or flags.
    Config,
    /// Numeric or other failure while running.
    Runtime,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Input => 1,
            Kind::Config => 2,
            Kind::Runtime => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self::new(Kind::Input, error)
    }

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self::new(Kind::Config, error)
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self::new(Kind::Runtime, error)
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            error: self.error.context(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        use DistillError::*;
        let kind = match &e {
            InvalidTemperature(_) | InvalidAlpha(_) | InvalidConfig(_) | InvalidProportions(_) => {
                Kind::Config
            }
            Manifest { .. } | Csv(_) | Json(_) | Io(_) | LabelOutOfRange { .. } | ShapeMismatch { .. }
            | EmptyDataset | Geometry(_) => Kind::Input,
            _ => Kind::Runtime,
        };
        Self::new(kind, e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let kind = match e {
            MetricsError::CodeCount { .. } => Kind::Config,
            _ => Kind::Input,
        };
        Self::new(kind, e)
    }
}

impl From<AgreementError> for CliError {
    fn from(e: AgreementError) -> Self {
        let kind = match e {
            AgreementError::InvalidParameter(_) => Kind::Config,
            AgreementError::ChanceDegenerate | AgreementError::ZeroVariance => Kind::Runtime,
            _ => Kind::Input,
        };
        Self::new(kind, e)
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        let kind = match e {
            StudyError::Io(_) => Kind::Runtime,
            _ => Kind::Input,
        };
        Self::new(kind, e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
