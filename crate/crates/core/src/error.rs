use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loop-back coefficient alpha = {0} must lie in [0, 1)")]
    AlphaOutOfRange(f64),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// `|1 - alpha_hat * theta|` vanished: the feedback loop has a pole on the unit circle.
    #[error("singular relay loop at bin {bin} (|1 - a*theta| = {magnitude:e})")]
    SingularLoop { bin: usize, magnitude: f64 },

    /// `|1 + alpha_hat * xi|` vanished in the xi -> theta map.
    #[error("singular xi/theta mapping at bin {bin}")]
    SingularMapping { bin: usize },

    /// Both dual prices vanish where the bin objective needs one of them.
    #[error("degenerate dual point (mu = {mu:e}, lambda = {lambda:e})")]
    DegenerateDual { mu: f64, lambda: f64 },

    #[error("relay budget {budget:e} W cannot cover forwarded noise {noise:e} W")]
    InfeasibleRelayBudget { budget: f64, noise: f64 },

    #[error("simulation diverged at sample {sample}")]
    Divergence { sample: usize },

    #[error("insufficient data: need {needed} samples, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
