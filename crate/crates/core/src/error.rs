use std::path::PathBuf;

use crate::flowmap::PicardTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("fields live on different domains")]
    DomainMismatch,

    #[error("point ({x}, {y}) lies more than one cell outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("integral of the unit-boundary solution is {0:e}; expected a positive value")]
    NonPositivePsi2Integral(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("seed {seed} escaped the domain at ({x}, {y})")]
    TrajectoryEscaped { seed: usize, x: f64, y: f64 },

    #[error("picard iteration stopped at k = {} with rho = {:e}", .0.iterations(), .0.last_rho())]
    PicardNotConverged(Box<PicardTrace>),

    #[error("initial streamfunction rejected: {0}")]
    InvalidInitialData(String),

    #[error("window [{start}, {end}] did not converge in {iterations} outer iterations (last distance {distance:e}); try a smaller window length")]
    WindowNotConverged {
        start: f64,
        end: f64,
        iterations: usize,
        distance: f64,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error("unknown plot kind `{0}` (expected field, trace or extrema)")]
    UnknownPlotKind(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
