use thiserror::Error;

/// Errors shared across the control stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or configuration parameter violates its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The reference trajectory leaves the admissible thrust band, so no
    /// positive acceleration bound exists along it.
    #[error("infeasible reference: {0}")]
    InfeasibleReference(String),

    /// Certificate synthesis requires one simple unit eigenvalue and all
    /// remaining eigenvalues strictly inside the unit circle.
    #[error("unsupported spectrum: {0}")]
    UnsupportedSpectrum(String),

    /// The bound schedule shrinks faster than the smoothing filter can
    /// follow, so recursive feasibility of the MPC is lost.
    #[error("feasibility violated: {0}")]
    FeasibilityViolated(String),

    /// The reference attitude frame is undefined (thrust vector parallel
    /// to the heading vector, or vanishing thrust).
    #[error("singular reference: {0}")]
    SingularReference(String),

    /// The desired attitude is undefined because the commanded thrust
    /// vector vanishes.
    #[error("attitude singularity: {0}")]
    AttitudeSingularity(String),

    /// The measured filter state already violates the bound at the start
    /// of the horizon, so the constraint set is empty.
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),

    /// A linear solve failed (singular or badly conditioned system).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Scenario file could not be parsed.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// File I/O while reading scenarios or emitting results.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
