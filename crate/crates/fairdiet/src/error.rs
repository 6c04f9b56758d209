//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lexicon parse error at line {line}: {message}")]
    LexiconParse { line: usize, message: String },

    #[error(
        "duplicate lexicon mapping for '{surface}': appears in ({first_a}, {first_b}) and ({second_a}, {second_b})"
    )]
    DuplicateMapping {
        surface: String,
        first_a: String,
        first_b: String,
        second_a: String,
        second_b: String,
    },

    #[error("column '{column}' not found; available columns: {available:?}")]
    MissingColumn {
        column: String,
        available: Vec<String>,
    },

    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("missing label at row {row}")]
    MissingLabel { row: usize },

    #[error("label '{value}' at row {row} is not numeric, required for threshold binarization")]
    NonNumericLabel { row: usize, value: String },

    #[error("split ratios must be positive and sum to 1, got {ratios:?} (sum {sum})")]
    BadSplitRatios { ratios: [f64; 3], sum: f64 },

    #[error("score table ({kind}) does not cover the dataset ids: {details}")]
    CoverageMismatch { kind: String, details: String },

    #[error("unknown example id {id}")]
    UnknownExampleId { id: u64 },

    #[error("unknown ranking '{name}' (expected vanilla_ge, random, healthy_random, or unhealthy_random)")]
    UnknownRanking { name: String },

    #[error("unknown score kind '{name}' (expected GE, EL2N, GraNd, Forget, or Random)")]
    UnknownScoreKind { name: String },

    #[error("undefined metric: {reason}")]
    UndefinedMetric { reason: String },

    #[error("prediction vectors have mismatched lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {what}")]
    EmptyInput { what: String },

    #[error(
        "training diverged: non-finite loss at epoch {epoch}, batch {batch} (learning rate {learning_rate})"
    )]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },

    #[error("template pattern {index} ('{pattern}') has {count} {{identity}} slots; expected exactly one")]
    BadTemplate {
        index: usize,
        pattern: String,
        count: usize,
    },

    #[error("template spec parse error at line {line}: {message}")]
    TemplateParse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("snapshot parse error at line {line}: {message}")]
    SnapshotParse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training failed for seed {seed}: {source}")]
    SeedFailure {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    IoPath {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io_path(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::IoPath {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
