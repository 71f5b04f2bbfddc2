use fsncsr_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const INVALID_CONFIG: u8 = 2;
    pub const NON_FINITE: u8 = 3;
    pub const SHAPE: u8 = 4;
    pub const MISSING_SAMPLE: u8 = 5;
    pub const INDIVISIBLE: u8 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::INVALID_CONFIG,
            CliError::CheckFailed(_) => exit::OTHER,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Json(_) => exit::INVALID_CONFIG,
                Error::NonFinite(_) => exit::NON_FINITE,
                Error::Shape { .. } => exit::SHAPE,
                Error::MissingSample(_) => exit::MISSING_SAMPLE,
                Error::Indivisible { .. } => exit::INDIVISIBLE,
                _ => exit::OTHER,
            },
        }
    }
}
