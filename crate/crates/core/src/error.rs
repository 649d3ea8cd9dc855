use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad distribution parameters, missing fields).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-side contract violation (shape mismatch, empty input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values encountered during computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative solver did not reach its tolerance.
    #[error("convergence failure: {what} (violation {violation:.3e} after {iters} iterations)")]
    Convergence {
        what: String,
        violation: f64,
        iters: usize,
    },

    /// Data unusable for the requested operation (e.g. zero-variance coordinate).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// All Monte Carlo kernel values underflowed; epsilon is too small.
    #[error("underflow: {0}")]
    Underflow(String),

    /// Adaptive step size collapsed below the representable minimum.
    #[error("stiffness: {0}")]
    Stiffness(String),

    /// Checkpoint or manifest version does not match this build.
    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable process exit code per error category (0 is success, 2 is
    /// reserved for argument parsing).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::Contract(_) => 4,
            Error::Numerical(_) => 5,
            Error::Convergence { .. } => 6,
            Error::DegenerateData(_) => 7,
            Error::Underflow(_) => 8,
            Error::Stiffness(_) => 9,
            Error::VersionMismatch(_) => 10,
            Error::Io(_) => 11,
            Error::Serde(_) => 12,
        }
    }
}
