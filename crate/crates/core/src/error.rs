use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the multiscale pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("boundary labeling does not cover the boundary: {0}")]
    BoundaryCoverage(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed grid file {path}, line {line}: {msg}")]
    GridFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {final_residual:.3e})")]
    SolverDiverged {
        iterations: usize,
        final_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("dense factorization failed: {0}")]
    Factorization(String),

    #[error("coarse Gram matrix is singular near pivot {pivot}")]
    SingularCoarseSystem { pivot: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerical stages (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_solver_failure();
        }
        matches!(
            self,
            Error::SolverDiverged { .. }
                | Error::Factorization(_)
                | Error::SingularCoarseSystem { .. }
                | Error::NonFinite(_)
        )
    }
}

/// Tags an error with the pipeline stage it came from.
pub fn at_stage<T>(stage: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.into(),
        source: Box::new(e),
    })
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
