//! Per-sample augmentation.
//!
//! Geometric transforms are composed into a single affine map in a fixed
//! order (rectification, aspect, centering, scale, rotation, mirror,
//! translation, crop), applied once to the pixels and to every quad. The
//! colorspace jitter follows. Pixels mapped from outside the source frame are
//! filled with mid gray.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::ConfigError;
use crate::geometry::{clip_convex, AffineMap, Point2, Polygon, Quad};
use crate::loss::sample_bilinear;
use crate::nn::Tensor;

pub const FILL_VALUE: f64 = 0.5;
pub const MAX_RETRIES: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rectification: bool,
    pub rectification_prob: f64,
    /// Residual rotation of a rectified plate, in degrees.
    pub rectification_tilt_deg: f64,
    pub aspect: bool,
    pub aspect_jitter: [f64; 2],
    pub centering: bool,
    pub centering_prob: f64,
    pub scaling: bool,
    pub scale: [f64; 2],
    pub rotation: bool,
    pub rotation_deg: f64,
    pub mirroring: bool,
    pub mirror_prob: f64,
    pub translation: bool,
    pub translate_frac: f64,
    pub cropping: bool,
    pub crop_frac: f64,
    pub colorspace: bool,
    pub gain: [f64; 2],
    pub bias: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rectification: true,
            rectification_prob: 0.1,
            rectification_tilt_deg: 5.0,
            aspect: true,
            aspect_jitter: [0.9, 1.1],
            centering: true,
            centering_prob: 0.3,
            scaling: true,
            scale: [0.75, 1.25],
            rotation: true,
            rotation_deg: 20.0,
            mirroring: true,
            mirror_prob: 0.5,
            translation: true,
            translate_frac: 0.15,
            cropping: true,
            crop_frac: 0.1,
            colorspace: true,
            gain: [0.8, 1.2],
            bias: [-0.1, 0.1],
        }
    }
}

impl AugmentConfig {
    /// Every transform switched off; ranges keep their defaults.
    pub fn disabled() -> Self {
        Self {
            rectification: false,
            aspect: false,
            centering: false,
            scaling: false,
            rotation: false,
            mirroring: false,
            translation: false,
            cropping: false,
            colorspace: false,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.rectification
            || self.aspect
            || self.centering
            || self.scaling
            || self.rotation
            || self.mirroring
            || self.translation
            || self.cropping
            || self.colorspace
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("augment: {m}")));
        for (name, p) in [
            ("rectification_prob", self.rectification_prob),
            ("centering_prob", self.centering_prob),
            ("mirror_prob", self.mirror_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        for (name, r) in [
            ("aspect_jitter", self.aspect_jitter),
            ("scale", self.scale),
            ("gain", self.gain),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad(format!("{name} {r:?} must be positive and ordered"));
            }
        }
        if !(self.bias[0] <= self.bias[1]) {
            return bad(format!("bias {:?} must be ordered", self.bias));
        }
        if !(0.0..=180.0).contains(&self.rotation_deg) || !(0.0..=45.0).contains(&self.rectification_tilt_deg) {
            return bad("rotation angles out of range".into());
        }
        if !(0.0..0.5).contains(&self.translate_frac) || !(0.0..0.4).contains(&self.crop_frac) {
            return bad("translate_frac must be in [0, 0.5) and crop_frac in [0, 0.4)".into());
        }
        Ok(())
    }
}

fn about(center: Point2, t: AffineMap) -> AffineMap {
    AffineMap::translation(center.x, center.y)
        .compose(&t)
        .compose(&AffineMap::translation(-center.x, -center.y))
}

fn sym(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    if a > 0.0 {
        rng.gen_range(-a..=a)
    } else {
        0.0
    }
}

fn range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] < r[1] {
        rng.gen_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Least-squares map taking `quad` to an upright rectangle of the same mean
/// side lengths centered at `center`.
fn frontalize(quad: &Quad, center: Point2) -> Option<AffineMap> {
    let c = &quad.corners;
    let w = 0.5 * (c[0].dist(&c[1]) + c[3].dist(&c[2]));
    let h = 0.5 * (c[0].dist(&c[3]) + c[1].dist(&c[2]));
    let rect = [
        Point2::new(center.x - w / 2.0, center.y - h / 2.0),
        Point2::new(center.x + w / 2.0, center.y - h / 2.0),
        Point2::new(center.x + w / 2.0, center.y + h / 2.0),
        Point2::new(center.x - w / 2.0, center.y + h / 2.0),
    ];
    AffineMap::fit(c, &rect).ok()
}

/// The geometric part of an augmentation as one image-to-image map.
pub fn sample_geometry(sample: &Sample, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> AffineMap {
    let (h, w) = (sample.height() as f64, sample.width() as f64);
    let center = Point2::new((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let mut g = AffineMap::IDENTITY;
    let focus = if sample.quads.is_empty() {
        None
    } else {
        Some(sample.quads[rng.gen_range(0..sample.quads.len())])
    };

    if cfg.rectification && rng.gen_bool(cfg.rectification_prob) {
        if let Some(front) = focus.and_then(|q| frontalize(&q, center)) {
            let tilt = sym(rng, cfg.rectification_tilt_deg).to_radians();
            g = about(center, AffineMap::rotation(tilt)).compose(&front);
        }
    }
    if cfg.aspect {
        let a = range(rng, cfg.aspect_jitter);
        g = about(center, AffineMap::scaling(a, 1.0)).compose(&g);
    }
    if cfg.centering && rng.gen_bool(cfg.centering_prob) {
        if let Some(q) = focus {
            let c = g.apply(q.centroid());
            g = AffineMap::translation(center.x - c.x, center.y - c.y).compose(&g);
        }
    }
    if cfg.scaling {
        let s = range(rng, cfg.scale);
        g = about(center, AffineMap::scaling(s, s)).compose(&g);
    }
    if cfg.rotation {
        let theta = sym(rng, cfg.rotation_deg).to_radians();
        g = about(center, AffineMap::rotation(theta)).compose(&g);
    }
    if cfg.mirroring && rng.gen_bool(cfg.mirror_prob) {
        g = AffineMap::new(-1.0, 0.0, 0.0, 1.0, w - 1.0, 0.0).compose(&g);
    }
    if cfg.translation {
        let tx = sym(rng, cfg.translate_frac) * w;
        let ty = sym(rng, cfg.translate_frac) * h;
        g = AffineMap::translation(tx, ty).compose(&g);
    }
    if cfg.cropping {
        let [l, r] = [0, 1].map(|_| rng.gen_range(0.0..=cfg.crop_frac) * w);
        let [t, b] = [0, 1].map(|_| rng.gen_range(0.0..=cfg.crop_frac) * h);
        let sx = (w - 1.0) / (w - 1.0 - l - r);
        let sy = (h - 1.0) / (h - 1.0 - t - b);
        g = AffineMap::new(sx, 0.0, 0.0, sy, -l * sx, -t * sy).compose(&g);
    }
    g
}

/// Resamples `image` so that output pixel `p` takes the source value at
/// `inverse(p)`; points outside the source frame get [`FILL_VALUE`].
pub fn warp_image(image: &Tensor, inverse: &AffineMap) -> Tensor {
    let (h, w, ch) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        for x in 0..w {
            let p = inverse.apply(Point2::new(x as f64, y as f64));
            let inside = p.x >= -0.5 && p.y >= -0.5 && p.x <= w as f64 - 0.5 && p.y <= h as f64 - 0.5;
            for c in 0..ch {
                out.push(if inside {
                    sample_bilinear(image, p.x, p.y, c)
                } else {
                    FILL_VALUE
                });
            }
        }
    }
    Tensor::new(&[h, w, ch], out).expect("sized above")
}

/// Maps quads through `g`, dropping any that end up entirely off-frame.
pub fn transform_quads(quads: &[Quad], g: &AffineMap, height: usize, width: usize) -> Vec<Quad> {
    let frame = Polygon::new(vec![
        Point2::new(0.0, 0.0),
        Point2::new(width as f64, 0.0),
        Point2::new(width as f64, height as f64),
        Point2::new(0.0, height as f64),
    ]);
    quads
        .iter()
        .filter_map(|q| Quad::from_unordered(q.map(g)).ok())
        .filter(|q| clip_convex(&Polygon::from(q), &frame).area() > 0.0)
        .collect()
}

fn jitter_colors(image: &mut Tensor, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) {
    let gain: [f64; 3] = std::array::from_fn(|_| range(rng, cfg.gain));
    let bias: [f64; 3] = std::array::from_fn(|_| range(rng, cfg.bias));
    let ch = image.shape()[2];
    for (i, v) in image.data_mut().iter_mut().enumerate() {
        let c = i % ch;
        *v = (gain[c % 3] * *v + bias[c % 3]).clamp(0.0, 1.0);
    }
}

fn augment_once(sample: &Sample, cfg: &AugmentConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = sample_geometry(sample, cfg, &mut rng);
    let (image, quads) = if g == AffineMap::IDENTITY {
        (sample.image.clone(), sample.quads.clone())
    } else {
        // The composed map is built from invertible factors.
        let inv = g.invert().unwrap_or(AffineMap::IDENTITY);
        (
            warp_image(&sample.image, &inv),
            transform_quads(&sample.quads, &g, sample.height(), sample.width()),
        )
    };
    let mut out = Sample::new(image, quads, sample.id.clone());
    if cfg.colorspace {
        jitter_colors(&mut out.image, cfg, &mut rng);
    }
    out
}

/// Deterministic in `(sample, cfg, seed)`. When every quad of a labeled
/// sample leaves the frame, the next seed is tried, up to [`MAX_RETRIES`]
/// times; after that the plate-less result is returned.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, seed: u64) -> Sample {
    let mut out = augment_once(sample, cfg, seed);
    let mut attempt = 0;
    while !sample.quads.is_empty() && out.quads.is_empty() && attempt < MAX_RETRIES {
        attempt += 1;
        out = augment_once(sample, cfg, seed.wrapping_add(attempt));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synth_scene, SynthConfig};
    use crate::geometry::qiou;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn scene() -> Sample {
        let cfg = SynthConfig {
            image_height: 96,
            image_width: 128,
            min_plates: 1,
            max_plates: 2,
            plate_width: [30.0, 60.0],
            plate_aspect: [2.0, 3.0],
            ..SynthConfig::default()
        };
        synth_scene(&cfg, 4)
    }

    #[test]
    fn defaults_validate() {
        AugmentConfig::default().validate().unwrap();
        let bad = AugmentConfig {
            mirror_prob: 1.5,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            scale: [1.2, 0.8],
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn disabled_is_identity() {
        let s = scene();
        for seed in 0..5 {
            assert_eq!(augment(&s, &AugmentConfig::disabled(), seed), s);
        }
    }

    #[test]
    fn mirror_only() {
        let img = Tensor::zeros(&[64, 100, 3]);
        let q = Quad::new([p(10., 10.), p(40., 12.), p(38., 30.), p(8., 28.)]).unwrap();
        let s = Sample::new(img, vec![q], "m");
        let cfg = AugmentConfig {
            mirroring: true,
            mirror_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let out = augment(&s, &cfg, 0);
        let expected = Quad::from_unordered(q.corners.map(|c| p(99.0 - c.x, c.y))).unwrap();
        assert_eq!(out.quads, vec![expected]);
        assert_eq!(expected.corners[0], p(59., 12.));
    }

    #[test]
    fn mirror_moves_pixels() {
        let mut img = Tensor::zeros(&[4, 5, 3]);
        img.data_mut()[0] = 1.0;
        let s = Sample::new(img, vec![], "px");
        let cfg = AugmentConfig {
            mirroring: true,
            mirror_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let out = augment(&s, &cfg, 0);
        assert_eq!(out.image.data()[4 * 3], 1.0);
        assert_eq!(out.image.data()[0], 0.0);
    }

    #[test]
    fn quarter_turn_of_centered_plate() {
        // A 40x20 plate centered in a 101x101 frame, turned by 90 degrees.
        let img = Tensor::zeros(&[101, 101, 3]);
        let q = Quad::rect(30., 40., 70., 60.).unwrap();
        let g = about(p(50., 50.), AffineMap::rotation(std::f64::consts::FRAC_PI_2));
        let turned = transform_quads(&[q], &g, 101, 101)[0];
        let expect = Quad::rect(40., 30., 60., 70.).unwrap();
        for (a, b) in turned.corners.iter().zip(&expect.corners) {
            assert!(a.dist(b) < 1e-9);
        }
        let v = qiou(&q, &turned);
        assert!((v - 400.0 / 1200.0).abs() < 1e-9 && v < 1.0);
        let sq = Quad::rect(40., 40., 60., 60.).unwrap();
        let sq_turned = transform_quads(&[sq], &g, 101, 101)[0];
        assert!((qiou(&sq, &sq_turned) - 1.0).abs() < 1e-9);
        drop(img);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = scene();
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&s, &cfg, 9), augment(&s, &cfg, 9));
        assert_ne!(augment(&s, &cfg, 9).image, augment(&s, &cfg, 10).image);
    }

    #[test]
    fn off_frame_plates_are_retried_then_dropped() {
        let img = Tensor::zeros(&[64, 64, 3]);
        let q = Quad::rect(1., 1., 20., 9.).unwrap();
        let s = Sample::new(img, vec![q], "edge");
        // Translation pushes everything off the frame for any draw.
        let cfg = AugmentConfig {
            translation: true,
            translate_frac: 0.45,
            ..AugmentConfig::disabled()
        };
        for seed in 0..20 {
            let out = augment(&s, &cfg, seed);
            for q in &out.quads {
                assert!(q.corners.iter().any(|c| c.x > 0.0 && c.x < 64.0 && c.y > 0.0 && c.y < 64.0)
                    || clip_convex(
                        &Polygon::from(q),
                        &Polygon::new(vec![p(0., 0.), p(64., 0.), p(64., 64.), p(0., 64.)])
                    )
                    .area()
                        > 0.0);
            }
        }
    }

    #[test]
    fn colorspace_stays_in_unit_range() {
        let s = scene();
        let cfg = AugmentConfig {
            colorspace: true,
            gain: [1.5, 2.0],
            bias: [0.1, 0.3],
            ..AugmentConfig::disabled()
        };
        let out = augment(&s, &cfg, 1);
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.quads, s.quads);
        assert_ne!(out.image, s.image);
    }

    /// Gaussian dots on the plate corners; the intensity centroid of each dot
    /// after warping must land on the transformed quad corner.
    fn corner_dots(q: &Quad, h: usize, w: usize) -> Tensor {
        let sigma2 = 2.0 * 1.5 * 1.5;
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let v: f64 = q
                    .corners
                    .iter()
                    .map(|c| (-((x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2)) / sigma2).exp())
                    .sum();
                data.extend([v, v, v]);
            }
        }
        Tensor::new(&[h, w, 3], data).unwrap()
    }

    fn dot_centroid(img: &Tensor, c: Point2, radius: f64) -> Option<Point2> {
        let (h, w) = (img.shape()[0] as i64, img.shape()[1] as i64);
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        let r = radius.ceil() as i64;
        for y in (c.y.round() as i64 - r)..=(c.y.round() as i64 + r) {
            for x in (c.x.round() as i64 - r)..=(c.x.round() as i64 + r) {
                if x < 0 || y < 0 || x >= w || y >= h {
                    return None;
                }
                let v = img.data()[((y * w + x) * 3) as usize];
                let v = (v - 0.02).max(0.0);
                sx += v * x as f64;
                sy += v * y as f64;
                sw += v;
            }
        }
        (sw > 0.0).then(|| p(sx / sw, sy / sw))
    }

    #[test]
    fn labels_follow_pixels_for_every_geometric_transform() {
        let (h, w) = (120, 160);
        let q = Quad::new([p(50., 45.), p(110., 50.), p(108., 78.), p(48., 73.)]).unwrap();
        let s = Sample::new(corner_dots(&q, h, w), vec![q], "dots");
        let only = |f: fn(&mut AugmentConfig)| {
            let mut c = AugmentConfig::disabled();
            f(&mut c);
            c
        };
        let configs = [
            only(|c| {
                c.rectification = true;
                c.rectification_prob = 1.0;
            }),
            only(|c| c.aspect = true),
            only(|c| {
                c.centering = true;
                c.centering_prob = 1.0;
            }),
            only(|c| c.scaling = true),
            only(|c| c.rotation = true),
            only(|c| {
                c.mirroring = true;
                c.mirror_prob = 1.0;
            }),
            only(|c| {
                c.translation = true;
                c.translate_frac = 0.05;
            }),
            only(|c| c.cropping = true),
        ];
        for (k, cfg) in configs.iter().enumerate() {
            for seed in 0..4 {
                let out = augment(&s, cfg, seed);
                assert_eq!(out.quads.len(), 1, "config {k}");
                let mut checked = 0;
                for c in &out.quads[0].corners {
                    let Some(found) = dot_centroid(&out.image, *c, 6.0) else { continue };
                    assert!(found.dist(c) < 0.5, "config {k} seed {seed}: {found} vs {c}");
                    checked += 1;
                }
                assert!(checked >= 2, "config {k}: corners left the frame");
            }
        }
    }
}
