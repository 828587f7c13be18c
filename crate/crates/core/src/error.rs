use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("unsupported signal model for {context}: {variant}")]
    UnsupportedSignal {
        context: &'static str,
        variant: &'static str,
    },

    #[error("integration blow-up at t = {t:e} s")]
    IntegrationBlowup { t: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical degeneracy: innovation variance S = {s:e} at step {step}")]
    Degenerate { step: usize, s: f64 },

    #[error("cholesky factorisation failed after jitter escalation (last eps = {eps:e})")]
    Cholesky { eps: f64 },

    #[error("minimum of the objective at the bracket edge (omega = {omega})")]
    BoundaryMinimum { omega: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("empty measurement record")]
    EmptyRecord,

    #[error("not enough samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("experiment failed: {excluded} of {runs} runs excluded (limit 1%)")]
    TooManyExclusions { excluded: usize, runs: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameters(_)
                | Error::UnsupportedSignal { .. }
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
