use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("interaction weights carry no separable (gamma, tau) tags")]
    NotSeparable,

    #[error("non-finite state at step {step} for player {player} (sample {sample})")]
    NonFiniteState {
        sample: usize,
        step: usize,
        player: usize,
    },

    #[error("primitive `{0}` has no registered adjoint rule")]
    UnregisteredPrimitive(String),

    #[error("objective diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// Last parameter vector whose objective value was finite.
        last_finite: Vec<f64>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
