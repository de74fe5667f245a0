use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("annotation {annotation_id} references missing image id {image_id}")]
    DanglingImage { annotation_id: u64, image_id: u64 },
    #[error("annotation {annotation_id} references unknown category id {category_id}")]
    UnknownCategory { annotation_id: u64, category_id: u32 },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("freeze policy prefix `{0}` matches no parameter")]
    UnmatchedPrefix(String),
    #[error("parameter structures differ: {0}")]
    StructureMismatch(String),
    #[error("class id lists overlap on id {0}")]
    OverlappingIds(u32),
    #[error("class id list `{0}` is not sorted ascending")]
    UnsortedIds(&'static str),
    #[error("classifier has {rows} rows but `{which}` lists {ids} ids")]
    RowCountMismatch { which: &'static str, rows: usize, ids: usize },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing metric `{0}`")]
    MissingMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True when the error stems from user-supplied inputs (config, flags,
    /// documents) rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFinite(_) | Error::Shape(_) | Error::Image(_))
    }
}
