//! Fixed Sobel edge branch.
//!
//! The branch converts the RGB input to luminance, optionally smooths it with
//! a 3x3 Gaussian, and convolves it with the horizontal and vertical Sobel
//! kernels using clamp-to-edge padding. The output carries three channels:
//! horizontal gradient, vertical gradient and gradient magnitude. The kernels
//! are registered as frozen parameters so they travel with checkpoints but are
//! never updated by the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::nn::{Graph, Padding, ParamId, ParamStore, Tensor, Var};

/// Horizontal-gradient kernel, row-major 3x3.
pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
/// Vertical-gradient kernel; the transpose of [`SOBEL_X`].
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
pub const GAUSSIAN_3X3: [f64; 9] = [
    1.0 / 16.0,
    2.0 / 16.0,
    1.0 / 16.0,
    2.0 / 16.0,
    4.0 / 16.0,
    2.0 / 16.0,
    1.0 / 16.0,
    2.0 / 16.0,
    1.0 / 16.0,
];
/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// Added under the square root of the magnitude so flat regions stay
/// differentiable.
pub const MAGNITUDE_EPS: f64 = 1e-12;

pub const SOBEL_X_NAME: &str = "edge.sobel_x";
pub const SOBEL_Y_NAME: &str = "edge.sobel_y";

/// Which edge channels are fused into the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeChannels {
    /// Horizontal gradient, vertical gradient and magnitude.
    #[default]
    All,
    MagnitudeOnly,
}

impl EdgeChannels {
    pub fn count(self) -> usize {
        match self {
            EdgeChannels::All => 3,
            EdgeChannels::MagnitudeOnly => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SobelKernels {
    pub gx: ParamId,
    pub gy: ParamId,
}

impl SobelKernels {
    /// Registers both kernels as frozen `3 x 3 x 1 x 1` parameters.
    pub fn register(store: &mut ParamStore) -> Self {
        let gx = store.add(SOBEL_X_NAME, kernel3(&SOBEL_X), false);
        let gy = store.add(SOBEL_Y_NAME, kernel3(&SOBEL_Y), false);
        Self { gx, gy }
    }

    /// Whether both kernels still hold their defining constants bit for bit.
    pub fn intact(&self, store: &ParamStore) -> bool {
        store.get(self.gx).value.data() == SOBEL_X && store.get(self.gy).value.data() == SOBEL_Y
    }
}

fn kernel3(values: &[f64; 9]) -> Tensor {
    Tensor::new(&[3, 3, 1, 1], values.to_vec()).expect("3x3 kernel")
}

/// Luminance of a `B x H x W x 3` image.
pub fn rgb_to_gray(g: &mut Graph, image: Var) -> Result<Var, ShapeError> {
    let (_, _, _, c) = g.value(image).dims4()?;
    if c != 3 {
        return Err(ShapeError::mismatch("rgb_to_gray", "3 channels", g.value(image).shape()));
    }
    let k = g.constant(Tensor::new(&[1, 1, 3, 1], LUMA.to_vec())?);
    g.conv2d(image, k, None, 1, Padding::Valid)
}

/// 3x3 Gaussian smoothing with clamp-to-edge borders; identity when disabled.
pub fn gaussian_presmooth(g: &mut Graph, gray: Var, enabled: bool) -> Result<Var, ShapeError> {
    if !enabled {
        return Ok(gray);
    }
    let k = g.constant(kernel3(&GAUSSIAN_3X3));
    g.conv2d(gray, k, None, 1, Padding::SameReplicate)
}

/// Sobel responses of a `B x H x W x 1` intensity image as a
/// `B x H x W x 3` tensor: gx, gy, sqrt(gx^2 + gy^2 + eps).
pub fn sobel_features(
    g: &mut Graph,
    store: &ParamStore,
    kernels: &SobelKernels,
    gray: Var,
) -> Result<Var, ShapeError> {
    let (_, h, w, c) = g.value(gray).dims4()?;
    if c != 1 || h < 3 || w < 3 {
        return Err(ShapeError::mismatch(
            "sobel_features",
            "B x H x W x 1 with H, W >= 3",
            g.value(gray).shape(),
        ));
    }
    let kx = g.param(store, kernels.gx);
    let ky = g.param(store, kernels.gy);
    let gx = g.conv2d(gray, kx, None, 1, Padding::SameReplicate)?;
    let gy = g.conv2d(gray, ky, None, 1, Padding::SameReplicate)?;
    let gx2 = g.mul(gx, gx)?;
    let gy2 = g.mul(gy, gy)?;
    let sq = g.add(gx2, gy2)?;
    let sq = g.add_scalar(sq, MAGNITUDE_EPS);
    let mag = g.sqrt(sq);
    let xy = g.concat_channels(gx, gy)?;
    g.concat_channels(xy, mag)
}

/// Full branch from an RGB batch to the fused edge channels.
pub fn edge_branch(
    g: &mut Graph,
    store: &ParamStore,
    kernels: &SobelKernels,
    image: Var,
    presmooth: bool,
    channels: EdgeChannels,
) -> Result<Var, ShapeError> {
    let gray = rgb_to_gray(g, image)?;
    let gray = gaussian_presmooth(g, gray, presmooth)?;
    let feats = sobel_features(g, store, kernels, gray)?;
    match channels {
        EdgeChannels::All => Ok(feats),
        EdgeChannels::MagnitudeOnly => g.slice_channels(feats, 2, 1),
    }
}

/// Eager helper: the three edge maps of an RGB batch.
pub fn edge_maps(image: &Tensor, presmooth: bool) -> Result<Tensor, ShapeError> {
    let mut store = ParamStore::new();
    let kernels = SobelKernels::register(&mut store);
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let out = edge_branch(&mut g, &store, &kernels, x, presmooth, EdgeChannels::All)?;
    Ok(g.value(out).clone())
}
