use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rac_core::Error),

    #[error("{0}")]
    Usage(String),

    /// A check ran and did not pass (gradient tolerance and the like).
    #[error("{0}")]
    CheckFailed(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use rac_core::Error as E;
        let code = match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::NonFinite(_) | E::ZeroNorm | E::Empty(_) => 2,
                E::NonDeterministic { .. } => 1,
                _ => 3,
            },
        };
        ExitCode::from(code)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
