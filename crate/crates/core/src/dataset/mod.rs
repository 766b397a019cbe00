//! Images, annotations, synthetic scenes, augmentation and batching.

pub mod annotations;
pub mod augment;
pub mod batch;
pub mod pnm;
pub mod synth;

pub use annotations::{parse_annotation_text, parse_annotations, write_annotation_text, write_annotations, AnnotatedImage};
pub use augment::{augment, AugmentConfig};
pub use batch::{letterbox, make_batch, Batch, Letterbox};
pub use pnm::{read_image, write_image};
pub use synth::{render_warped, synth_scene, synth_scene_with_meta, PlateMeta, SynthConfig};

use crate::geometry::Quad;
use crate::nn::Tensor;

/// An `H x W x 3` image in `[0, 1]` with its ground-truth quads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub quads: Vec<Quad>,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor, quads: Vec<Quad>, id: impl Into<String>) -> Self {
        Self {
            image,
            quads,
            id: id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}
