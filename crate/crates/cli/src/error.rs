use mortgp::{AnalysisError, CovariateError, GpError, GroupingError, LifeTableError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0} fit(s) failed: {1}")]
    PartialFit(usize, String),
    #[error("internal invariant breach: {0}")]
    Invariant(String),
}

impl CliError {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::PartialFit(..) => 2,
            CliError::Invariant(_) => 3,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// Prefix the message with where it happened, keeping the class.
    pub fn within(self, context: &str) -> CliError {
        match self {
            CliError::Config(m) => CliError::Config(format!("{context}: {m}")),
            CliError::Invariant(m) => CliError::Invariant(format!("{context}: {m}")),
            other => other,
        }
    }
}

impl From<GpError> for CliError {
    fn from(e: GpError) -> Self {
        match e {
            GpError::Invariant(m) => CliError::Invariant(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::NegativeVariance(_) => CliError::Invariant(e.to_string()),
            AnalysisError::Gp(g) => g.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

macro_rules! config_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Config(e.to_string())
            }
        }
    )*};
}

config_errors!(LifeTableError, CovariateError, GroupingError, csv::Error, serde_json::Error);

pub type Result<T> = std::result::Result<T, CliError>;
