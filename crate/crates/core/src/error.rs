use thiserror::Error;

use crate::gmsa::PlanViolation;

/// Errors produced by the library.
///
/// Every variant maps to a stable kebab-case code (see [`Error::code`]) that is
/// also what the command line prints.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("linear combination over an empty list")]
    EmptyLincomb,

    #[error("non-finite coordinate at position {index}")]
    NonFinite { index: usize },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("witness is not a fixed point (residual {residual:e})")]
    WitnessNotFixed { residual: f64 },

    #[error("invalid plan: {}", format_violations(.0))]
    InvalidPlan(Vec<PlanViolation>),

    #[error("operator family: {0}")]
    Family(String),

    #[error("firm-nonexpansiveness hypotheses are not asserted for this plan")]
    FneHypothesesUnmet,

    #[error("iteration {k} is beyond the explicit schedule of length {len}")]
    HorizonExceeded { k: usize, len: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid relaxation: {0}")]
    InvalidRelaxation(String),

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    #[error("non-finite iterate at iteration {k}")]
    NumericalDivergence { k: usize },

    #[error("objective oracle: {0}")]
    Oracle(String),

    #[error("no argmin witness supplied to the objective oracle")]
    NoArgminWitness,

    #[error("MSA plan references operator {index} outside 0..={max}")]
    MsaIndex { index: usize, max: usize },

    #[error("trace: {0}")]
    Trace(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::EmptyLincomb => "empty-lincomb",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidSet(_) => "invalid-set",
            Error::InvalidOperator(_) => "invalid-operator",
            Error::WitnessNotFixed { .. } => "witness-not-fixed",
            Error::InvalidPlan(_) => "invalid-plan",
            Error::Family(_) => "family-error",
            Error::FneHypothesesUnmet => "fne-hypotheses-unmet",
            Error::HorizonExceeded { .. } => "horizon-exceeded",
            Error::InvalidSchedule(_) => "invalid-schedule",
            Error::InvalidRelaxation(_) => "invalid-relaxation",
            Error::InvalidPerturbation(_) => "invalid-perturbation",
            Error::NumericalDivergence { .. } => "numerical-divergence",
            Error::Oracle(_) => "oracle-error",
            Error::NoArgminWitness => "no-argmin-witness",
            Error::MsaIndex { .. } => "msa-index-error",
            Error::Trace(_) => "trace-error",
            Error::Config(_) => "config-error",
            Error::Io(_) => "io-error",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn format_violations(v: &[PlanViolation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
