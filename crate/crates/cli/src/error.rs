use thiserror::Error;

/// CLI failure classes; each maps to its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing dependency: {artifact} not found ({hint})")]
    Dependency { artifact: String, hint: String },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("schema mismatch in {file}: column `{column}` {detail}")]
    Schema { file: String, column: String, detail: String },

    #[error(transparent)]
    Core(mtrack_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEPENDENCY: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Dependency { .. } => EXIT_DEPENDENCY,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Schema { .. } => EXIT_SCHEMA,
            CliError::Core(_) => EXIT_OTHER,
        }
    }

    pub fn dependency(artifact: impl Into<String>, hint: impl Into<String>) -> Self {
        CliError::Dependency { artifact: artifact.into(), hint: hint.into() }
    }
}

impl From<mtrack_core::Error> for CliError {
    fn from(e: mtrack_core::Error) -> Self {
        use mtrack_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::TrainingDiverged { .. } | E::OptimizationDiverged { .. } | E::SimulationDiverged { .. } => {
                CliError::Divergence(e.to_string())
            }
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
