use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

/// Failures while decoding one of the binary formats (feature frames,
/// checkpoints, IDX files).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    Version(u16),

    #[error("unsupported dtype tag {0}")]
    Dtype(u8),

    #[error("truncated frame: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },

    #[error("length disagreement: header declares {declared}, payload holds {actual}")]
    Length { declared: usize, actual: usize },

    #[error("malformed content: {0}")]
    Malformed(String),
}
