use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (max |M + Mᵀ| = {0:e})")]
    NotSkew(f64),
    #[error("matrix is not a rotation (max |RᵀR - I| = {0:e})")]
    NotRotation(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("desired thrust direction is degenerate")]
    DegenerateThrust,
    #[error("desired heading b1d is parallel to the thrust axis")]
    DegenerateHeading,
    #[error("window is empty")]
    EmptyWindow,
    #[error("window is not full ({have} of {need} segments)")]
    WindowNotFull { have: usize, need: usize },
    #[error("segment dt {got} does not match window dt {expected}")]
    DtMismatch { expected: f64, got: f64 },
    #[error("segment at t = {got} does not follow previous segment (expected t = {expected})")]
    NonContiguous { expected: f64, got: f64 },
    #[error("every segment in the window was rejected")]
    AllRejected,
    #[error("{0} has mismatched lengths")]
    LengthMismatch(&'static str),
    #[error("point is not strictly interior to the efficiency bounds")]
    NotInterior,
    #[error("KKT matrix is singular at newton iteration {iteration}")]
    SingularKkt { iteration: usize },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite state at step {step} (t = {t})")]
    NumericalAbort { step: usize, t: f64 },
    #[error("controller failed at step {step}: {source}")]
    Control {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("estimator failed at step {step} (t = {t}): {source}")]
    Estimator {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("no samples left after excluding transients")]
    EmptyMetrics,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that stem from numerics (instability, singular
    /// systems) rather than bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalAbort { .. }
                | Error::Control { .. }
                | Error::Estimator { .. }
                | Error::SingularKkt { .. }
                | Error::SingularInnovation
                | Error::DegenerateThrust
                | Error::DegenerateHeading
        )
    }
}
