use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or values; nothing was run.
    #[error("{0}")]
    Validation(String),
    /// Failure while loading data or running a command.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    srnn_core::data::DataError,
    srnn_core::rnn::RnnError,
    srnn_core::srnn::SrnnError,
    srnn_core::eval::EvalError,
    srnn_core::baselines::BaselineError,
    serde_json::Error
);
