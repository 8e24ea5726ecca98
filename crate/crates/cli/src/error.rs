#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A prerequisite artifact or input is absent or inconsistent.
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Missing(_) => 2,
            CliError::Invalid(_) => 3,
        }
    }
}

impl From<mesocal::pipeline::PipelineError> for CliError {
    fn from(e: mesocal::pipeline::PipelineError) -> Self {
        match e {
            mesocal::pipeline::PipelineError::Config(m) => CliError::Invalid(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

pub fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}
