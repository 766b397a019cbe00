use super::augment::FILL_VALUE;
use super::Sample;
use crate::error::BatchError;
use crate::geometry::{Point2, Quad};
use crate::loss::{build_target_grid, sample_bilinear, GridSpec, TargetGrid};
use crate::nn::Tensor;

/// Aspect-preserving resize into a fixed canvas: `p' = scale * p + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Letterbox {
    pub fn to_canvas(&self, p: Point2) -> Point2 {
        Point2::new(self.scale * p.x + self.offset_x, self.scale * p.y + self.offset_y)
    }

    pub fn to_source(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.offset_x) / self.scale, (p.y - self.offset_y) / self.scale)
    }

    pub fn quad_to_source(&self, q: &Quad) -> Quad {
        Quad {
            corners: q.corners.map(|p| self.to_source(p)),
        }
    }
}

/// Fits `sample` into `height x width`, padding with mid gray.
pub fn letterbox(sample: &Sample, height: usize, width: usize) -> (Sample, Letterbox) {
    let (h, w) = (sample.height(), sample.width());
    if (h, w) == (height, width) {
        let identity = Letterbox {
            scale: 1.0,
            offset_x: 0.0,
            offset_y: 0.0,
        };
        return (sample.clone(), identity);
    }
    let scale = (height as f64 / h as f64).min(width as f64 / w as f64);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, width);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, height);
    let lb = Letterbox {
        scale,
        offset_x: ((width - nw) / 2) as f64,
        offset_y: ((height - nh) / 2) as f64,
    };
    let (ox, oy) = (lb.offset_x as usize, lb.offset_y as usize);
    let mut data = vec![FILL_VALUE; height * width * 3];
    for y in oy..oy + nh {
        for x in ox..ox + nw {
            let src = lb.to_source(Point2::new(x as f64, y as f64));
            for c in 0..3 {
                data[(y * width + x) * 3 + c] = sample_bilinear(&sample.image, src.x, src.y, c);
            }
        }
    }
    let quads = sample
        .quads
        .iter()
        .map(|q| Quad {
            corners: q.corners.map(|p| lb.to_canvas(p)),
        })
        .collect();
    let image = Tensor::new(&[height, width, 3], data).expect("sized above");
    (Sample::new(image, quads, sample.id.clone()), lb)
}

/// A stacked batch with its training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub targets: Vec<TargetGrid>,
    /// Quads in canvas coordinates.
    pub quads: Vec<Vec<Quad>>,
    pub ids: Vec<String>,
}

/// Letterboxes the first `batch_size` samples to `height x width` and builds
/// their target grids.
pub fn make_batch(
    samples: &[Sample],
    batch_size: usize,
    height: usize,
    width: usize,
    spec: GridSpec,
) -> Result<Batch, BatchError> {
    if batch_size == 0 {
        return Err(BatchError::EmptyBatch);
    }
    if samples.len() < batch_size {
        return Err(BatchError::NotEnoughSamples {
            needed: batch_size,
            available: samples.len(),
        });
    }
    let mut images = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    let mut quads = Vec::with_capacity(batch_size);
    let mut ids = Vec::with_capacity(batch_size);
    for s in &samples[..batch_size] {
        if s.image.rank() != 3 || s.image.shape()[2] != 3 {
            return Err(BatchError::BadSample {
                id: s.id.clone(),
                detail: format!("image shape {:?} is not H x W x 3", s.image.shape()),
            });
        }
        let (boxed, _) = letterbox(s, height, width);
        targets.push(build_target_grid(&boxed.quads, height, width, spec));
        images.push(boxed.image);
        quads.push(boxed.quads);
        ids.push(boxed.id);
    }
    let images = Tensor::stack(&images).map_err(|e| BatchError::BadSample {
        id: ids[0].clone(),
        detail: e.to_string(),
    })?;
    Ok(Batch {
        images,
        targets,
        quads,
        ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: GridSpec = GridSpec {
        stride: 16.0,
        alpha: 7.75,
    };

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn batch_of_one_shapes() {
        let s = Sample::new(Tensor::full(&[32, 48, 3], 0.2), vec![], "a");
        let b = make_batch(&[s], 1, 32, 48, SPEC).unwrap();
        assert_eq!(b.images.shape(), &[1, 32, 48, 3]);
        assert_eq!(b.targets.len(), 1);
        assert_eq!((b.targets[0].rows, b.targets[0].cols), (2, 3));
    }

    #[test]
    fn errors() {
        let s = Sample::new(Tensor::zeros(&[32, 32, 3]), vec![], "a");
        assert_eq!(make_batch(&[s.clone()], 0, 32, 32, SPEC), Err(BatchError::EmptyBatch));
        assert!(matches!(
            make_batch(&[s], 2, 32, 32, SPEC),
            Err(BatchError::NotEnoughSamples { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn letterbox_wide_image_into_square() {
        let q = Quad::rect(10., 5., 50., 20.).unwrap();
        let s = Sample::new(Tensor::full(&[64, 128, 3], 0.9), vec![q], "wide");
        let (out, lb) = letterbox(&s, 128, 128);
        assert_eq!(lb.scale, 1.0);
        assert_eq!((lb.offset_x, lb.offset_y), (0.0, 32.0));
        assert_eq!(out.quads[0], Quad::rect(10., 37., 50., 52.).unwrap());
        // Padding rows are gray, content rows keep their values.
        assert_eq!(out.image.data()[0], FILL_VALUE);
        assert_eq!(out.image.data()[(40 * 128 + 5) * 3], 0.9);
        assert_eq!(lb.quad_to_source(&out.quads[0]), q);
    }

    #[test]
    fn half_resize_halves_quads() {
        let q = Quad::new([p(20., 40.), p(100., 44.), p(98., 80.), p(18., 76.)]).unwrap();
        let s = Sample::new(Tensor::zeros(&[256, 256, 3]), vec![q], "big");
        let (out, lb) = letterbox(&s, 128, 128);
        assert_eq!(lb.scale, 0.5);
        assert_eq!(out.quads[0].corners, q.corners.map(|c| p(c.x / 2.0, c.y / 2.0)));
    }

    #[test]
    fn targets_follow_letterboxed_quads() {
        let q = Quad::rect(20., 4., 44., 14.).unwrap();
        let s = Sample::new(Tensor::zeros(&[32, 64, 3]), vec![q], "t");
        let b = make_batch(&[s], 1, 64, 64, SPEC).unwrap();
        // Shifted down by 16 to span (20, 20)..(44, 30).
        assert!(b.targets[0].cell(1, 1).is_object());
        assert!(b.targets[0].cell(1, 2).is_object());
        assert_eq!(b.targets[0].positive_count(), 2);
    }
}
