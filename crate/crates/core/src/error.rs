use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("poles {i} and {k} are {distance:.3e} apart, below the collision floor {floor:.1e}{}", fmt_time(.time))]
    CollidingPoles {
        i: usize,
        k: usize,
        distance: f64,
        floor: f64,
        time: Option<Complex64>,
    },
    #[error("constraint b_{i}.a_{i} = 1 violated: |b.a - 1| = {residual:.3e} > {tolerance:.1e}")]
    ConstraintViolated {
        i: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("random draw failed after {attempts} attempts: {what}")]
    DegenerateDraw { what: &'static str, attempts: usize },
    #[error("gauge scale for particle {0} is zero")]
    ZeroScale(usize),
    #[error("z = {z} is too close to the spectrum of L (condition estimate {condition:.3e})")]
    SpectralCollision { z: Complex64, condition: f64 },
    #[error("x = {x} is within {distance:.3e} of pole {i}")]
    PoleHit { i: usize, x: Complex64, distance: f64 },
    #[error("step limit exceeded: {steps} steps requested, limit {limit}")]
    StepLimitExceeded { steps: usize, limit: usize },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Io(String),
}

fn fmt_time(time: &Option<Complex64>) -> String {
    match time {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
