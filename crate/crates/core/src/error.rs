use std::path::PathBuf;

use thiserror::Error;

use crate::optimizer::OptimizerTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("distance {distance_m:.3} m is outside the pathloss model range (>= {min_m} m)")]
    ModelRange { distance_m: f64, min_m: f64 },

    #[error("singular channel: condition number of HH^H is {condition:.3e}")]
    SingularChannel { condition: f64 },

    #[error("pilot plan is not identifiable: {pilots} pilots for {unknowns} unknowns per user")]
    Identifiability { pilots: usize, unknowns: usize },

    #[error("optimizer did not converge after {} iterations", trace.iterations())]
    NonConvergence { trace: Box<OptimizerTrace> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
