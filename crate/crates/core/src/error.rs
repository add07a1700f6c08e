use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid budget: N={budget} must satisfy 1 <= N <= T={horizon}")]
    InvalidBudget { budget: usize, horizon: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("search space has {count} candidate schedules, above the cap of {cap}")]
    SearchSpaceTooLarge { count: u128, cap: u128 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "log-likelihood decreased at EM iteration {iteration}: {previous} -> {current}"
    )]
    NonMonotoneLikelihood {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::NonMonotoneLikelihood { .. }
        )
    }
}
