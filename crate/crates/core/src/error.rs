use thiserror::Error;

/// Errors raised by model composition, MPC solves and scenario handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("member set is empty")]
    EmptyMembers,

    #[error("agent {0} is not part of the network")]
    UnknownAgent(usize),

    #[error("member sets overlap at agent {0}")]
    Overlap(usize),

    #[error("players {0:?} and {1:?} share no coupling")]
    NotCoupled(Vec<usize>, Vec<usize>),

    #[error("state weight is not positive semidefinite")]
    NotPsd,

    #[error("infeasible bounds at variable {index}: min {min} > max {max}")]
    InfeasibleBounds { index: usize, min: f64, max: f64 },

    #[error("QP iteration limit {iterations} reached (KKT residual {residual:e})")]
    IterationLimit {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("solver failed at step {step} for player {player:?}: {source}")]
    Solver {
        step: usize,
        player: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors originating in the numerical solver rather than in
    /// user-supplied configuration.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Solver { .. } | Error::IterationLimit { .. } | Error::NotPsd
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
