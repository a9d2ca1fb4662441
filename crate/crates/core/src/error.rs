use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema: {0}")]
    Schema(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("ordering: {0}")]
    Ordering(String),

    #[error("constraint data: {0}")]
    ConstraintData(String),

    #[error("objective: {0}")]
    Objective(String),

    #[error("degenerate leaf: hessian sum plus lambda is {0}")]
    DegenerateLeaf(f64),

    #[error("degenerate ratio: week {week} has stage-1 prediction sum {sum}")]
    DegenerateRatio { week: u32, sum: f64 },

    #[error("persistence: {0}")]
    Persistence(String),

    #[error("config: {0}")]
    Config(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn in_stage(stage: u8) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Stable, machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Ordering(_) => "ordering",
            Error::ConstraintData(_) => "constraint-data",
            Error::Objective(_) => "objective",
            Error::DegenerateLeaf(_) => "degenerate-leaf",
            Error::DegenerateRatio { .. } => "degenerate-ratio",
            Error::Persistence(_) => "persistence",
            Error::Config(_) => "config",
            Error::Metric(_) => "metric",
            Error::Usage(_) => "usage",
            Error::Stage { source, .. } => source.category(),
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 usage, 3 validation, 4 constraint-data, 5 persistence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::ConstraintData(_) | Error::DegenerateRatio { .. } => 4,
            Error::Persistence(_) | Error::Io { .. } => 5,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
