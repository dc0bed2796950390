use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised across the estimation pipeline.
///
/// Each variant maps onto a machine-readable class (see [`Error::class`]) so
/// the command-line runner can turn failures into stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("draw {index} lies outside the prior support")]
    OutsideSupport { index: usize },

    #[error("partial-data subset of size {r} is not identifiable with k = {k} components")]
    Identifiability { r: usize, k: usize },

    #[error("weight matrix is not strongly connected; components: {components:?}")]
    NotConnected { components: Vec<Vec<usize>> },

    #[error("rung {rung} has no draw with finite weight")]
    UnsampledRung { rung: usize },

    #[error("recursive normalization did not converge after {iterations} sweeps (final delta {final_delta:e})")]
    NonConvergence { iterations: usize, final_delta: f64 },

    #[error("rungs {left} and {right} do not share support on the pooled draws")]
    SupportMismatch { left: usize, right: usize },

    #[error("Hessian is rank deficient; offending rungs: {rungs:?}")]
    RankDeficient { rungs: Vec<usize> },

    #[error("nested sampler stalled at shell {shell} after {proposals} proposals")]
    Stall { shell: usize, proposals: usize },

    #[error("optimizer failed: {0}")]
    Optimization(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for reporting and process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Config,
    #[serde(rename = "sampler_stall")]
    Stall,
    Connectivity,
    NonConvergence,
    Other,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Stall => 3,
            ErrorClass::Connectivity => 4,
            ErrorClass::NonConvergence => 5,
            ErrorClass::Other => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Stall => "sampler_stall",
            ErrorClass::Connectivity => "connectivity",
            ErrorClass::NonConvergence => "non_convergence",
            ErrorClass::Other => "other",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::UnsupportedModel(_)
            | Error::Dataset(_)
            | Error::Identifiability { .. } => ErrorClass::Config,
            Error::Stall { .. } => ErrorClass::Stall,
            Error::NotConnected { .. }
            | Error::UnsampledRung { .. }
            | Error::SupportMismatch { .. }
            | Error::RankDeficient { .. } => ErrorClass::Connectivity,
            Error::NonConvergence { .. } | Error::Optimization(_) => ErrorClass::NonConvergence,
            _ => ErrorClass::Other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
