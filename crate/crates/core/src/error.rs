use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("table has no valid rows ({rejected} rejected)")]
    EmptyTable { rejected: usize },

    #[error("column `{0}` is degenerate (zero variance)")]
    DegenerateColumn(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("variational fit diverged after {iterations} iterations (non-finite ELBO)")]
    Divergence { iterations: usize },

    #[error("ELBO estimation failed: {non_finite} of {total} samples non-finite")]
    Estimation { non_finite: usize, total: usize },

    #[error("quadrature oracle hit a non-finite integrand at ({0}, {1})")]
    Oracle(f64, f64),

    #[error("{dataset}/{target}: {source}")]
    Context {
        dataset: String,
        target: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn with_context(self, dataset: &str, target: &str) -> Self {
        Error::Context {
            dataset: dataset.to_string(),
            target: target.to_string(),
            source: Box::new(self),
        }
    }
}
