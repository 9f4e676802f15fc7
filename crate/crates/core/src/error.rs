use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // tensor engine
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(&'static str),
    #[error("log of non-positive value {0}")]
    LogOfNonPositive(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    // model
    #[error("token id {id} out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { id: usize, vocab_size: usize },
    #[error("sequence length {len} outside 1..={max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("every position is masked")]
    AllPositionsMasked,
    #[error("multi-choice head needs at least 2 options, got {0}")]
    TooFewOptions(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    // objectives
    #[error("gold position {0} is masked")]
    GoldPositionMasked(usize),
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    // adversary
    #[error("input embedding has zero norm")]
    ZeroInputNorm,
    #[error("distributions have different support sizes ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("recipe does not match the supplied data: {0}")]
    RecipeDatasetMismatch(String),

    // decoder
    #[error("no valid span")]
    NoValidSpan,
    #[error("empty dev set")]
    EmptyDevSet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    // augmenter
    #[error("unknown document {0}")]
    UnknownDocument(usize),

    // insight
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("example has no words")]
    EmptyExample,
    #[error("bucket boundaries must be strictly increasing")]
    UnsortedBoundaries,
    #[error("bucket boundaries differ between reports")]
    BoundaryMismatch,
    #[error("baseline metric is zero in bucket {0}")]
    DivisionByZeroMetric(String),

    // data / cli
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("gradient check failed: {0}")]
    GradientCheckFailed(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse error class, mapped to process exit codes by the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }
}

impl Error {
    /// `error=<code> kind=<kind> message=<json string>` on one line.
    pub fn to_line(&self) -> String {
        let message = serde_json::to_string(&self.to_string()).expect("string serializes");
        format!("error={} kind={} message={message}", self.code(), self.kind().as_str())
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Usage(_) | InvalidConfig(_) | RecipeDatasetMismatch(_) => ErrorKind::Usage,
            NonFiniteValue(_) | LogOfNonPositive(_) | ZeroInputNorm | ProbabilityOutOfRange(_) | GradientCheckFailed(_) => {
                ErrorKind::Numeric
            },
            _ => ErrorKind::Data,
        }
    }

    /// Stable snake-case identifier of the variant, for machine-readable output.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            ShapeMismatch { .. } => "shape_mismatch",
            NonFiniteValue(_) => "non_finite_value",
            LogOfNonPositive(_) => "log_of_non_positive",
            NotScalar(_) => "not_scalar",
            TokenOutOfVocab { .. } => "token_out_of_vocab",
            SequenceTooLong { .. } => "sequence_too_long",
            AllPositionsMasked => "all_positions_masked",
            TooFewOptions(_) => "too_few_options",
            InvalidConfig(_) => "invalid_config",
            Checkpoint(_) => "checkpoint",
            GoldPositionMasked(_) => "gold_position_masked",
            ProbabilityOutOfRange(_) => "probability_out_of_range",
            IndexOutOfRange { .. } => "index_out_of_range",
            ZeroInputNorm => "zero_input_norm",
            SupportMismatch(..) => "support_mismatch",
            EmptyBatch => "empty_batch",
            RecipeDatasetMismatch(_) => "recipe_dataset_mismatch",
            NoValidSpan => "no_valid_span",
            EmptyDevSet => "empty_dev_set",
            LengthMismatch(..) => "length_mismatch",
            UnknownDocument(_) => "unknown_document",
            EmptyCorpus => "empty_corpus",
            EmptyExample => "empty_example",
            UnsortedBoundaries => "unsorted_boundaries",
            BoundaryMismatch => "boundary_mismatch",
            DivisionByZeroMetric(_) => "division_by_zero_metric",
            InvalidDataset(_) => "invalid_dataset",
            InvalidSpec(_) => "invalid_spec",
            GradientCheckFailed(_) => "gradient_check_failed",
            Usage(_) => "usage",
            Io { .. } => "io",
            Json { .. } => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
