use std::path::PathBuf;

use crate::data::Phase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: PathBuf, column: String },

    #[error("{file}: row {row}, column `{column}`: {message}")]
    InvalidValue {
        file: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{file}: timestamps not strictly increasing at row {row}")]
    NonMonotoneTime { file: PathBuf, row: usize },

    #[error("{file}: row {row} has {found} fields, header has {expected}")]
    RowLength {
        file: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{context}: too few samples for differentiation ({samples} < 3)")]
    TooFewSamples { context: String, samples: usize },

    #[error("non-uniform sample spacing: step {index} is {step} s, mean is {mean} s (tolerance 1%)")]
    NonUniformStep { index: usize, step: f64, mean: f64 },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },

    #[error("singular leg jacobian (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("encoder weight matrix is rank deficient (smallest singular value {smallest:e})")]
    RankDeficient { smallest: f64 },

    #[error("no data for phase {0}")]
    NoPhaseData(Phase),

    #[error("model has no phase model for {0}")]
    MissingPhaseModel(Phase),

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("pipeline step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("integration diverged at t = {time} s")]
    IntegrationBlowUp { time: f64 },

    #[error("adaptive integrator exceeded {max_steps} substeps on [{t0}, {t1}]")]
    StepLimit { t0: f64, t1: f64, max_steps: usize },

    #[error("aSLIP leg length is zero in contact")]
    ZeroLegLength,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        found: String,
        expected: u64,
    },

    #[error("lift matrix ill-conditioned after {attempts} attempts (condition {condition:e})")]
    IllConditionedLift { attempts: usize, condition: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Stable machine-readable code, printed by the CLI ahead of the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn { .. } => "E_MISSING_COLUMN",
            Error::InvalidValue { .. } => "E_INVALID_VALUE",
            Error::NonMonotoneTime { .. } => "E_NON_MONOTONE_TIME",
            Error::RowLength { .. } => "E_ROW_LENGTH",
            Error::TooFewSamples { .. } => "E_TOO_FEW_SAMPLES",
            Error::NonUniformStep { .. } => "E_NON_UNIFORM_STEP",
            Error::Shape { .. } => "E_SHAPE",
            Error::SingularJacobian { .. } => "E_SINGULAR_JACOBIAN",
            Error::RankDeficient { .. } => "E_RANK_DEFICIENT",
            Error::NoPhaseData(_) => "E_NO_PHASE_DATA",
            Error::MissingPhaseModel(_) => "E_MISSING_PHASE",
            Error::Divergence { .. } => "E_DIVERGENCE",
            Error::Step { source, .. } => source.code(),
            Error::IntegrationBlowUp { .. } => "E_INTEGRATION_BLOWUP",
            Error::StepLimit { .. } => "E_STEP_LIMIT",
            Error::ZeroLegLength => "E_ZERO_LEG",
            Error::Config(_) => "E_CONFIG",
            Error::Parse { .. } => "E_PARSE",
            Error::UnsupportedVersion { .. } => "E_UNSUPPORTED_VERSION",
            Error::IllConditionedLift { .. } => "E_ILL_CONDITIONED_LIFT",
            Error::Io { .. } => "E_IO",
            Error::Csv { .. } => "E_CSV",
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
