//! IO companion to `pseudocal-core`: CSV ingestion with one-hot encoding,
//! JSON report emission, the UCI Adult pipeline, and the CLI plumbing.

pub mod adult;
pub mod report;
pub mod schema;

/// Process exit codes of the `pseudocal` binary.
pub mod exit_codes {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 2;
    pub const VSTAR_COLLAPSE: u8 = 3;
    pub const IO: u8 = 4;
}

/// Error wrapper carrying the exit code the binary should report.
#[derive(Debug)]
pub enum AppError {
    /// Schema or data validation failure (exit 2).
    Validation(String),
    /// The residual score variance collapsed (exit 3).
    VStarCollapse(f64),
    /// Filesystem or serialization failure, with path context (exit 4).
    Io(String),
}

impl core::fmt::Display for AppError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AppError::Validation(m) => write!(f, "{m}"),
            AppError::VStarCollapse(v) => {
                write!(f, "residual score variance collapsed (V*hat = {v:.3e})")
            }
            AppError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Validation(_) => exit_codes::VALIDATION,
            AppError::VStarCollapse(_) => exit_codes::VSTAR_COLLAPSE,
            AppError::Io(_) => exit_codes::IO,
        }
    }

    pub fn io(path: &std::path::Path, err: impl core::fmt::Display) -> AppError {
        AppError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<pseudocal_core::Error> for AppError {
    fn from(e: pseudocal_core::Error) -> Self {
        match e {
            pseudocal_core::Error::VStarCollapse { v_star, .. } => AppError::VStarCollapse(v_star),
            other => AppError::Validation(other.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
