//! Edge-augmented warped planar object detection.
//!
//! A small convolutional network, optionally fed with fixed Sobel edge
//! features, predicts per output cell an object probability and a local affine
//! map that carries a canonical square onto a planar object such as a license
//! plate. The crate covers geometry and qIoU, a minimal autodiff engine, the
//! network, its loss and decoder, and data handling.

pub mod config;
pub mod dataset;
pub mod edge;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod net;
pub mod nn;
pub mod train;

pub use error::{
    AnnotationError, BatchError, CheckpointError, ConfigError, GeometryError, ImageError, LossError, NetError, TrainError,
    ShapeError,
};
pub use geometry::{qiou, AffineMap, Point2, Polygon, Quad};
pub use loss::{Detection, LossBreakdown};
pub use net::{FeatureGrid, Model, NetworkConfig, Variant};
pub use nn::{AdamConfig, Tensor};
