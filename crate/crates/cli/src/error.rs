use fastbev::augment::AugmentError;
use fastbev::bench::BenchError;
use fastbev::io::TensorError;
use fastbev::lut::{LutDecodeError, LutError};
use fastbev::projection::ProjectionError;
use fastbev::scene::CalibError;
use fastbev::temporal::TemporalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    LutFile(LutDecodeError),
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Bench(BenchError),
    #[error("{0}")]
    Io(String),
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(msg) => CliError::Config(msg),
            BenchError::Calib(e) => CliError::Calib(e),
            BenchError::Lut(e) => CliError::Lut(e),
            BenchError::Projection(e) => CliError::Projection(e),
            BenchError::Temporal(e) => CliError::Temporal(e),
            BenchError::Io(msg) => CliError::Io(msg),
            other => CliError::Bench(other),
        }
    }
}

impl From<LutDecodeError> for CliError {
    fn from(e: LutDecodeError) -> Self {
        match e {
            LutDecodeError::Io(msg) => CliError::Io(msg),
            other => CliError::LutFile(other),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io(msg) => CliError::Io(msg),
            other => CliError::Tensor(other),
        }
    }
}

impl CliError {
    /// Stable name printed with every failure.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Calib(_) => "CalibrationError",
            CliError::Lut(_) => "RigError",
            CliError::LutFile(_) => "LutDecodeError",
            CliError::Tensor(_) => "TensorError",
            CliError::Projection(_) => "ProjectionError",
            CliError::Temporal(_) => "TemporalError",
            CliError::Augment(_) => "AugmentError",
            CliError::Bench(BenchError::Equivalence(_)) => "EquivalenceError",
            CliError::Bench(_) => "BenchError",
            CliError::Io(_) => "IoError",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Bench(BenchError::Equivalence(_)) => 4,
            _ => 1,
        }
    }
}
