use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index out of range in {op}: {index} >= {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("all positions ignored: mean loss undefined")]
    AllIgnored,

    #[error("non-finite gradient in parameter `{param}`")]
    PoisonedGradient { param: String },

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("perplexity needs at least 2 tokens, got {len}")]
    InsufficientContext { len: usize },

    #[error("task label `{0}` already exists")]
    DuplicateTask(String),

    #[error("unknown task label `{0}`")]
    UnknownTask(String),

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("cannot parse api call: {0}")]
    ApiParse(String),

    #[error("dialogue format error: {0}")]
    DialogueFormat(String),

    #[error("domain spec error: {0}")]
    DomainSpec(String),

    #[error("dataset load error at line {line}: {msg}")]
    DatasetLoad { line: usize, msg: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("metric matrix row {0} incomplete")]
    IncompleteRow(usize),

    #[error("non-finite training loss")]
    NonFiniteLoss,

    #[error("training diverged (non-finite loss) at task {task_index} (`{task_label}`)")]
    Diverged {
        task_index: usize,
        task_label: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
