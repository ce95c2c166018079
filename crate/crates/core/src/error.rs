use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "thermal truncation loss {loss:.3e} at n_c = {n_c} exceeds 1e-8; use n_c >= {suggested}"
    )]
    TruncationLoss {
        loss: f64,
        n_c: usize,
        suggested: usize,
    },

    #[error(
        "population {leaked:.3e} would leak above the cutoff n_c = {n_c}; enlarge the Fock space"
    )]
    CutoffLeakage { leaked: f64, n_c: usize },

    #[error("measurement almost surely fails (success probability {success_prob:.3e})")]
    MeasurementFailed { success_prob: f64 },

    #[error("populations are not normalized (sum = {total})")]
    NotNormalized { total: f64 },

    #[error("Fock index {index} outside 0..={n_c}")]
    IndexOutOfRange { index: usize, n_c: usize },

    #[error("conditional transfer needs n_r >= 1")]
    NothingToTransfer,

    #[error("transfer ratio undefined: p_{n} was zero before measurement {m}")]
    UndefinedRatio { m: usize, n: usize },

    #[error("integrator unstable: trace drifted by {drift:.3e}")]
    IntegratorInstability { drift: f64 },

    #[error("schedule has {got} intervals but the protocol needs {expected}")]
    ScheduleMismatch { expected: usize, got: usize },

    #[error("non-finite gradient during policy update: {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
