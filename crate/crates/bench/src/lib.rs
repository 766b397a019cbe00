//! Benchmark fixtures shared by the bench targets.

use wpod_core::net::{NetworkConfig, Variant};
use wpod_core::{Point2, Quad, Tensor};

/// Smooth deterministic image of shape `b x h x w x 3`.
pub fn test_images(b: usize, h: usize, w: usize) -> Tensor {
    let data = (0..b * h * w * 3)
        .map(|i| 0.5 + 0.4 * ((i % 97) as f64 * 0.13).sin())
        .collect();
    Tensor::new(&[b, h, w, 3], data).expect("sized")
}

pub fn network(variant: Variant, size: usize) -> NetworkConfig {
    NetworkConfig {
        variant,
        input_height: size,
        input_width: size,
        base_channels: 8,
        blocks_per_stage: 1,
        ..NetworkConfig::default()
    }
}

/// Two overlapping tilted quads.
pub fn quad_pair() -> (Quad, Quad) {
    let p = Point2::new;
    let a = Quad::new([p(10.0, 12.0), p(80.0, 20.0), p(78.0, 50.0), p(8.0, 42.0)]).expect("convex");
    let b = Quad::new([p(30.0, 5.0), p(95.0, 15.0), p(90.0, 60.0), p(25.0, 48.0)]).expect("convex");
    (a, b)
}
