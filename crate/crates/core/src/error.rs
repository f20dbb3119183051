use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {node}: {detail}")]
    Shape { node: String, detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("target of length {target_len} cannot be aligned to {frames} frames (needs at least {required})")]
    CtcInfeasible {
        target_len: usize,
        frames: usize,
        required: usize,
    },

    #[error("label {label} is outside the vocabulary of size {size}")]
    LabelOutOfRange { label: usize, size: usize },

    #[error("character {ch:?} in utterance {utterance} is missing from the vocabulary")]
    UnknownCharacter { ch: String, utterance: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("language {0:?} is not known to this model")]
    UnknownLanguage(String),

    #[error("character set of {language} is not covered by the pooled vocabulary (missing {missing:?}); use language transfer instead")]
    IncompatibleCharset {
        language: String,
        missing: Vec<String>,
    },

    #[error("malformed {format} data: {detail}")]
    Format {
        format: &'static str,
        detail: String,
    },

    #[error("missing dependency for stage {stage}: {detail}")]
    MissingStage { stage: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }
}
