use thiserror::Error;

/// Failure modes shared across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or combination of parameters is outside the supported range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A field became non-finite during time stepping.
    #[error("integration diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    /// Imaginary-time relaxation did not reach the tolerance.
    #[error("ground state did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    /// Thomas-Fermi construction with a chemical potential below the trap minimum.
    #[error("empty condensate: omega0 = {omega0} does not exceed min(U) = {min_potential}")]
    EmptyCondensate { omega0: f64, min_potential: f64 },

    /// Ray frequency drift could not be controlled by step halving.
    #[error("ray integration failed at t = {time}: frequency drift {drift:.3e}")]
    RayIntegration { time: f64, drift: f64 },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operation requires at least one sample.
    #[error("empty ensemble")]
    EmptyEnsemble,

    /// A master-equation ensemble member blew up.
    #[error("ensemble member {member} diverged at step {step}")]
    MemberDiverged { member: usize, step: usize },

    #[error("i/o: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
