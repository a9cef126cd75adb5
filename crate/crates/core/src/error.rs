use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is outside {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("kernel value {value} is not finite at t = {t}, s = {s}")]
    Kernel { t: f64, s: f64, value: f64 },

    #[error(
        "covariance is not positive semidefinite: pivot {index} is {pivot:e} (tolerance {tolerance:e}), \
         so the smallest eigenvalue is at most {pivot:e}"
    )]
    Indefinite { index: usize, pivot: f64, tolerance: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("quadrature resolution: {0}")]
    Resolution(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("unknown registry entry `{0}`")]
    Unknown(String),

    #[error("invalid ensemble file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain { name, value, domain }
    }
}

pub(crate) fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("H", hurst, "(0, 1)"))
    }
}
