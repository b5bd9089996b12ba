//! Command-line failure classification. Every error carries the exit
//! code class it maps to: 1 for configuration and usage problems, 2 for
//! bad or missing data, 3 for numerical failures during training.

use std::fmt;

use milbeat_core::aggregate::AggregateError;
use milbeat_core::eval::EvalError;
use milbeat_core::instances::InstanceError;
use milbeat_core::model::ModelError;
use milbeat_core::signal::SignalError;
use milbeat_core::synthgen::{CorpusError, SynthError};
use milbeat_core::training::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid flags, config keys, or config values. Exit code 1.
    Usage(String),
    /// Missing, malformed, or degenerate input data. Exit code 2.
    Data(String),
    /// Non-finite values encountered during optimization. Exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "configuration error: {msg}"),
            Self::Data(msg) => write!(f, "data error: {msg}"),
            Self::Numerical(msg) => write!(f, "numerical error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        match e {
            // Reachable only through config-supplied values.
            InstanceError::BeatsPerInstanceOutOfRange { .. } | InstanceError::ZeroCap => {
                Self::Usage(e.to_string())
            }
            InstanceError::NoInstances => Self::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnsupportedVariant { .. } => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<AggregateError> for CliError {
    fn from(e: AggregateError) -> Self {
        match e {
            AggregateError::InvalidFraction { .. } => Self::Usage(e.to_string()),
            AggregateError::Model(inner) => inner.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => Self::Numerical(e.to_string()),
            TrainError::InvalidConfig { .. } => Self::Usage(e.to_string()),
            TrainError::OneClassOnly { .. } => Self::Data(e.to_string()),
            TrainError::Model(inner) => inner.into(),
            TrainError::Aggregate(inner) => inner.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig { .. }
            | EvalError::InvalidTestFraction { .. }
            | EvalError::BadInstanceLength { .. }
            | EvalError::BadPositiveFraction { .. } => Self::Usage(e.to_string()),
            EvalError::Train(inner) => inner.into(),
            EvalError::Aggregate(inner) => inner.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}
