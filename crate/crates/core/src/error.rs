use thiserror::Error;

use crate::models::LinearModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: row {row}, column `{column}`: {message}")]
    Schema {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate case id `{0}`")]
    DuplicateCase(String),

    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),

    #[error("empty feature set: {0}")]
    EmptyFeatureSet(String),

    #[error("feature `{0}` has no observed values")]
    FullyMissing(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("feature arity mismatch: model expects {expected}, input has {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("elastic net did not converge within {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        last: Box<LinearModel>,
    },

    #[error("kernel SHAP system is singular with {0} coalitions; use a larger coalition budget")]
    SingularSystem(usize),

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}

/// Attaches a pipeline stage name to errors.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
