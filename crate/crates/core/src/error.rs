use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: kernel does not fit along axis `{axis}`: input extent {input} < kernel extent {kernel}")]
    KernelTooLarge {
        op: &'static str,
        axis: &'static str,
        input: usize,
        kernel: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dropout rate must be in [0, 1), got {0}")]
    InvalidDropoutRate(f64),

    #[error("batch norm: inference requested before any training update initialized the running statistics")]
    UninitializedBatchNorm,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("degenerate frame: reference landmarks 0 and 9 coincide, normalization scale is zero")]
    DegenerateFrame,

    #[error("loss must be a scalar (one element), got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("modality mismatch: model consumes {expected}, data provides {got}")]
    ModalityMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("class {class} has {count} sample(s); stratified split needs at least 2 per class")]
    UnsplittableClass { class: usize, count: usize },

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
