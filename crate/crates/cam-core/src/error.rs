use thiserror::Error;

/// Error taxonomy for the whole crate. Variants map to distinct process
/// exit codes in the CLI, so keep the set small and stable.
#[derive(Debug, Error)]
pub enum CamError {
    /// Tensor or feature dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called outside its documented domain.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Task generation could not place all entities with the required clearance.
    #[error("placement density: {0}")]
    Density(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CamError>;

impl CamError {
    /// Process exit code used by the CLI. 0 is success, 1 is reserved for
    /// I/O and other environmental failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CamError::Config(_) => 2,
            CamError::Shape(_) | CamError::Contract(_) | CamError::Density(_) => 3,
            CamError::Numeric(_) => 4,
            CamError::Io(_) => 1,
        }
    }
}
