use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("kernel construction failed: residual {residual:.3e} above tolerance {tol:.1e}")]
    KernelConstruction { residual: f64, tol: f64 },
    #[error("projection domain error: no root of the orthogonality function in [{lo}, {hi}]")]
    ProjectionDomain { lo: f64, hi: f64 },
    #[error("ambiguous projection: roots at {0:?}")]
    Ambiguity(Vec<f64>),
    #[error("gauge distance error: transfer matrix entry {0:.3e} is singular")]
    GaugeDistance(f64),
    #[error("flow blow-up at t = {t:.4}: {reason}")]
    FlowBlowup { t: f64, reason: String },
    #[error("iteration failed to contract: distances {0:?}")]
    NonContraction(Vec<f64>),
    #[error("construction failure: {0}")]
    Construction(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
