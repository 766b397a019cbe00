use wpod_core::{Point2, Quad, Tensor};

pub const RED: [f64; 3] = [1.0, 0.0, 0.0];

/// Paints a 1-pixel line into an `H x W x 3` image, clipped to the frame.
pub fn draw_line(image: &mut Tensor, a: Point2, b: Point2, color: [f64; 3]) {
    let (h, w) = (image.shape()[0] as i64, image.shape()[1] as i64);
    let steps = (a.dist(&b) * 2.0).ceil().max(1.0) as usize;
    let data = image.data_mut();
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = (a.x + (b.x - a.x) * t).round() as i64;
        let y = (a.y + (b.y - a.y) * t).round() as i64;
        if x >= 0 && y >= 0 && x < w && y < h {
            let i = ((y * w + x) * 3) as usize;
            data[i..i + 3].copy_from_slice(&color);
        }
    }
}

pub fn draw_quad(image: &mut Tensor, q: &Quad, color: [f64; 3]) {
    for i in 0..4 {
        draw_line(image, q.corners[i], q.corners[(i + 1) % 4], color);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outline_only() {
        let mut img = Tensor::zeros(&[20, 20, 3]);
        draw_quad(&mut img, &Quad::rect(2., 3., 12., 9.).unwrap(), RED);
        let px = |x: usize, y: usize| &img.data()[(y * 20 + x) * 3..(y * 20 + x) * 3 + 3];
        assert_eq!(px(2, 3), &RED);
        assert_eq!(px(7, 9), &RED);
        assert_eq!(px(12, 5), &RED);
        assert_eq!(px(7, 6), &[0.0, 0.0, 0.0]);
        let red = img.data().chunks(3).filter(|p| p == &RED).count();
        assert_eq!(red, 2 * (11 + 7) - 4);
    }

    #[test]
    fn clipped_to_frame() {
        let mut img = Tensor::zeros(&[5, 5, 3]);
        draw_line(&mut img, Point2::new(-10., 2.), Point2::new(20., 2.), RED);
        assert_eq!(img.data().chunks(3).filter(|p| p == &RED).count(), 5);
    }
}
