use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("quad corners are not in clockwise screen order")]
    WrongOrientation,
    #[error("quad is not strictly convex")]
    NotConvex,
    #[error("quad has zero area")]
    Degenerate,
    #[error("affine map is singular (det = {0})")]
    SingularMap(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("{op}: expected {expected}, got {got:?}")]
    Mismatch {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: spatial dims {h}x{w} must be even")]
    OddSpatial { op: &'static str, h: usize, w: usize },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
}

impl ShapeError {
    pub(crate) fn mismatch(op: &'static str, expected: impl Into<String>, got: &[usize]) -> Self {
        ShapeError::Mismatch {
            op,
            expected: expected.into(),
            got: got.to_vec(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("parameter `{name}`: {detail}")]
    Shape { name: String, detail: String },
    #[error("embedded config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}: expected P5 or P6")]
    BadMagic(String),
    #[error("unsupported netpbm format {0} (only binary P5/P6)")]
    Unsupported(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("cannot write tensor of shape {0:?} as an image")]
    Shape(Vec<usize>),
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("location loss requested for a cell without an object")]
    NegativeCell,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("batch of {needed} requested from {available} samples")]
    NotEnoughSamples { needed: usize, available: usize },
    #[error("sample `{id}`: {detail}")]
    BadSample { id: String, detail: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error("no training samples")]
    NoData,
    #[error("{0}")]
    Callback(String),
}
