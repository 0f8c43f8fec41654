use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the sensitivity and uncertainty pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate branch {from}-{to}: series impedance matrix is singular")]
    DegenerateBranch { from: u32, to: u32 },

    #[error("graph not connected: bus {0} is unreachable from the slack bus")]
    NotConnected(u32),

    #[error("load flow did not converge after {iterations} iterations (last mismatch {mismatch:.3e} pu)")]
    NotConverged { iterations: usize, mismatch: f64 },

    #[error("load flow Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),

    #[error("grid state is not a converged load-flow solution")]
    UnconvergedState,

    #[error("Jacobian not invertible (reciprocal condition {rcond:.3e}); sensitivities are undefined at this operating point")]
    NotInvertible { rcond: f64 },

    #[error("linear solve residual {residual:.3e} exceeds bound {bound:.3e}")]
    Residual { residual: f64, bound: f64 },

    #[error("invalid noise specification: {0}")]
    Noise(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all {0} Monte-Carlo trials failed")]
    AllTrialsFailed(usize),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("failed to write report: {0}")]
    Output(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to input or I/O problems).
    pub fn is_numerical(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::DegenerateBranch { .. }
                | Error::NotConverged { .. }
                | Error::SingularJacobian(_)
                | Error::UnconvergedState
                | Error::NotInvertible { .. }
                | Error::Residual { .. }
                | Error::AllTrialsFailed(_)
        )
    }
}

/// Attach the pipeline stage to an error.
pub(crate) trait Context<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> Context<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
