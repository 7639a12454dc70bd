use fbm_ergodic::{Error as CoreError, ErrorCategory};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Resource(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Resource(_) | CliError::Io { .. } => "resource",
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => "config",
                ErrorCategory::Resource => "resource",
                ErrorCategory::Numerical => "numerical",
            },
        }
    }

    /// 2 config, 3 resource (including I/O), 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "resource" => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}
