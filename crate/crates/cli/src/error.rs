use std::path::PathBuf;

use tabreward::judge::JudgeError;
use tabreward::rewards::RewardError;
use tabreward::sql::SqlError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown sample_id {id:?}")]
    UnresolvedSampleId { path: PathBuf, line: usize, id: String },
    #[error("inputs were produced under different configs ({0} vs {1})")]
    MixedConfig(String, String),
    #[error("{0}")]
    Config(String),
    #[error("external service failure: {0}")]
    External(String),
    #[error("gold-side error: {0}")]
    Gold(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } | CliError::UnresolvedSampleId { .. } | CliError::MixedConfig(..) => 2,
            CliError::External(_) => 3,
            CliError::Gold(_) => 4,
            CliError::Config(_) | CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// Maps a scoring failure for the record at `path:line`.
    pub fn from_reward(err: RewardError, path: &std::path::Path, line: usize) -> CliError {
        let at = format!("{}:{line}", path.display());
        match err {
            RewardError::Sql(SqlError::GoldExecution(m)) => CliError::Gold(format!("{at}: {m}")),
            RewardError::Sql(SqlError::DatabaseUnavailable(m)) | RewardError::DatabaseUnavailable(m) => {
                CliError::External(format!("{at}: database unavailable: {m}"))
            }
            RewardError::Judge(m) => CliError::External(format!("{at}: {m}")),
            RewardError::JudgeNotConfigured | RewardError::Config(_) => CliError::Config(err.to_string()),
            other => CliError::Other(format!("{at}: {other}")),
        }
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Config(m) => CliError::Config(m),
            other => CliError::External(other.to_string()),
        }
    }
}
