use thiserror::Error;

/// Crate-wide error type.
///
/// The variants mirror the failure classes of the public operations:
/// bad static configuration, bad call arguments, illegal command sequences,
/// analytic models evaluated outside their domain, and infeasible modes
/// (e.g. exhaustive enumeration above the pattern cap).
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model domain error: {0}")]
    ModelDomain(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    /// Process exit code for the CLI: 2 for configuration/schema problems,
    /// 3 for anything that went wrong at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::Json(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
