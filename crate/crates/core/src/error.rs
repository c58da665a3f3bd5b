use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("truncated CIFAR-10 file: {len} bytes is not a multiple of {record} byte records")]
    TruncatedFile { len: usize, record: usize },

    #[error("invalid label {label} at record {record}")]
    InvalidLabel { record: usize, label: u8 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate channel {channel}: standard deviation is zero")]
    DegenerateChannel { channel: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid class {class} for a {num_classes}-class model")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("line {line}: predicted label {predicted} is not the argmax ({argmax}) of the scores")]
    Inconsistent {
        line: usize,
        predicted: usize,
        argmax: usize,
    },

    #[error("records disagree on the number of classes ({first} vs {other})")]
    MixedClasses { first: usize, other: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error("pooled standard error is zero while the sample means differ")]
    InfiniteT,

    #[error("misclassified-class score is zero for image {0}")]
    ZeroScore(String),

    #[error("unknown image id {0}")]
    UnknownImage(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// The innermost error beneath any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stage names from the outermost wrapper inward.
    pub fn stages(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut e = self;
        while let Error::Stage { stage, source } = e {
            out.push(*stage);
            e = source;
        }
        out
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
