use std::path::PathBuf;

/// Broad class of a failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, unknown query combinations, unsupported settings.
    Config,
    /// Malformed or inconsistent input data.
    Data,
    /// Model loading or inference failures.
    Backend,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: missing required field `{field}`")]
    MissingField {
        path: String,
        line: usize,
        field: String,
    },
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("document `{doc_id}` has no label for task `{task}`")]
    MissingLabel { doc_id: String, task: String },
    #[error("task `{task}` is not labelled in corpus `{dataset}`")]
    UnknownTask { dataset: String, task: String },
    #[error("corpus `{0}` has no documents")]
    EmptyCorpus(String),
    #[error("corpus `{0}` declares no tasks")]
    NoTasks(String),
    #[error("dataset layout mismatch: {0}")]
    Layout(String),
    #[error("sentence references unknown document `{0}`")]
    UnknownDocument(String),
    #[error("subset of {requested} documents requested but only {available} available")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("document `{0}` has no non-empty text")]
    EmptyDocument(String),
    #[error("invalid token budget: {0}")]
    InvalidBudget(String),
    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("no query registered for dataset `{dataset}`, task `{task}`, type `{qtype}`")]
    UnknownQuery {
        dataset: String,
        task: String,
        qtype: String,
    },
    #[error("unknown query type `{0}`")]
    UnknownQueryType(String),
    #[error("unsupported query extension: {0}")]
    UnsupportedExtension(String),
    #[error("query registry: {0}")]
    Registry(String),

    #[error("backend `{backend}`: {msg}")]
    Backend { backend: String, msg: String },
    #[error("input of {tokens} tokens exceeds the backend limit of {max}")]
    InputTooLong { tokens: usize, max: usize },
    #[error("scoring unit {unit_index} of document `{doc_id}`: {source}")]
    Unit {
        doc_id: String,
        unit_index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid backend config: {0}")]
    BackendConfig(String),
    #[error("probability {value} outside [0, 1] ({context})")]
    InvalidProbability { value: f64, context: String },
    #[error("duplicate score for {0}")]
    DuplicateScore(String),

    #[error("document `{0}` has no scored units")]
    NoUnits(String),
    #[error("unit scores mix configurations: {0}")]
    MixedConfig(String),

    #[error("ranking has no positive documents; recall and AP are undefined")]
    NoPositives,
    #[error("proportion {0} outside (0, 1]")]
    InvalidProportion(f64),
    #[error("proportion grid must be ascending within (0, 1]")]
    InvalidGrid,
    #[error("document `{0}` has no gold label for this task")]
    UnlabeledDocument(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::UnknownQuery { .. }
            | Error::UnknownQueryType(_)
            | Error::UnsupportedExtension(_)
            | Error::InvalidBudget(_)
            | Error::BackendConfig(_)
            | Error::InvalidProportion(_)
            | Error::UnknownTask { .. }
            | Error::InvalidGrid => ErrorKind::Config,
            Error::Backend { .. } | Error::InputTooLong { .. } | Error::Tokenizer(_) => {
                ErrorKind::Backend
            }
            Error::Unit { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
