//! Synthetic street-like scenes with warped bar-glyph plates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::ConfigError;
use crate::geometry::{clip_convex, AffineMap, Point2, Polygon, Quad};
use crate::nn::Tensor;

const MIN_SIDE: f64 = 8.0;
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub min_plates: usize,
    pub max_plates: usize,
    /// Width over height of the frontal plate.
    pub plate_aspect: [f64; 2],
    /// Frontal plate width in pixels.
    pub plate_width: [f64; 2],
    pub max_rotation_deg: f64,
    pub max_shear: f64,
    /// Number of bar glyphs per plate.
    pub glyphs: [usize; 2],
    /// Plain distractor rectangles drawn behind the plates.
    pub clutter: usize,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_height: 256,
            image_width: 256,
            min_plates: 0,
            max_plates: 2,
            plate_aspect: [2.0, 5.0],
            plate_width: [40.0, 160.0],
            max_rotation_deg: 30.0,
            max_shear: 0.3,
            glyphs: [4, 8],
            clutter: 2,
            noise_std: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("synth: {m}")));
        if self.image_height < 16 || self.image_width < 16 {
            return bad("image must be at least 16x16".into());
        }
        if self.min_plates > self.max_plates {
            return bad("min_plates > max_plates".into());
        }
        let [a0, a1] = self.plate_aspect;
        if !(a0 > 0.0 && a0 <= a1) {
            return bad(format!("plate_aspect {:?} must be positive and ordered", self.plate_aspect));
        }
        let [w0, w1] = self.plate_width;
        if !(w0 <= w1) || w0 < MIN_SIDE * a0 {
            return bad(format!(
                "plate_width {:?} must be ordered with a minimum of at least {} px",
                self.plate_width,
                MIN_SIDE * a0
            ));
        }
        if w0 > 0.9 * self.image_width.min(self.image_height) as f64 {
            return bad("smallest plate does not fit the image".into());
        }
        if !(0.0..=80.0).contains(&self.max_rotation_deg) || !(0.0..=1.0).contains(&self.max_shear) {
            return bad("rotation must be in [0, 80] deg and shear in [0, 1]".into());
        }
        if self.glyphs[0] > self.glyphs[1] || self.glyphs[1] > 12 {
            return bad("glyphs must be ordered and at most 12".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        Ok(())
    }
}

/// Frontal geometry of a rendered plate: `to_image` carries the frontal
/// rectangle `[0, width] x [0, height]` onto the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateMeta {
    pub to_image: AffineMap,
    pub width: f64,
    pub height: f64,
    pub quad: Quad,
}

/// Plate paint in frontal coordinates normalized to `[0, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateStyle {
    pub ground: [f64; 3],
    pub ink: [f64; 3],
    /// `(u0, u1, v0, v1)` rectangles painted with ink.
    pub bars: Vec<[f64; 4]>,
}

impl PlateStyle {
    pub fn random(rng: &mut impl Rng, glyphs: [usize; 2]) -> Self {
        let bright = rng.gen_range(0.8..1.0);
        let ground = if rng.gen_bool(0.7) {
            [bright, bright, bright]
        } else {
            [bright, bright * rng.gen_range(0.85..1.0), bright * rng.gen_range(0.2..0.5)]
        };
        let dark = rng.gen_range(0.0..0.2);
        let ink = [dark, dark, dark + rng.gen_range(0.0..0.1)];
        let count = rng.gen_range(glyphs[0]..=glyphs[1]);
        let mut bars = Vec::with_capacity(count);
        if count > 0 {
            let pitch = 0.84 / count as f64;
            for k in 0..count {
                let u0 = 0.08 + pitch * k as f64 + pitch * rng.gen_range(0.1..0.25);
                let u1 = 0.08 + pitch * (k + 1) as f64 - pitch * rng.gen_range(0.15..0.3);
                let v0 = rng.gen_range(0.18..0.3);
                let v1 = rng.gen_range(0.7..0.82);
                bars.push([u0, u1, v0, v1]);
            }
        }
        Self { ground, ink, bars }
    }

    pub fn paint(&self, u: f64, v: f64) -> [f64; 3] {
        let border = u < 0.03 || u > 0.97 || v < 0.06 || v > 0.94;
        let on_bar = self
            .bars
            .iter()
            .any(|b| u >= b[0] && u <= b[1] && v >= b[2] && v <= b[3]);
        if border || on_bar {
            self.ink
        } else {
            self.ground
        }
    }
}

/// Paints `texture(u, v)` (frontal pixel coordinates in `[0, width] x [0,
/// height]`) into an `H x W x 3` image through `to_image`. Pixel `(x, y)` is
/// the point `(x, y)`; with `supersample = s` each pixel averages an `s x s`
/// grid of sub-points and blends by coverage.
pub fn render_warped(
    image: &mut Tensor,
    to_image: &AffineMap,
    width: f64,
    height: f64,
    supersample: usize,
    texture: impl Fn(f64, f64) -> [f64; 3],
) {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let Ok(inv) = to_image.invert() else { return };
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(width, 0.0),
        Point2::new(width, height),
        Point2::new(0.0, height),
    ]
    .map(|p| to_image.apply(p));
    let x0 = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let y0 = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let x1 = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as usize;
    let y1 = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as usize;
    let s = supersample.max(1);
    let offsets: Vec<f64> = (0..s).map(|k| (k as f64 + 0.5) / s as f64 - 0.5).collect();
    let data = image.data_mut();
    for y in y0..=y1.min(h - 1) {
        for x in x0..=x1.min(w - 1) {
            let mut acc = [0.0; 3];
            let mut hits = 0usize;
            for dy in &offsets {
                for dx in &offsets {
                    let f = inv.apply(Point2::new(x as f64 + dx, y as f64 + dy));
                    if f.x >= 0.0 && f.x <= width && f.y >= 0.0 && f.y <= height {
                        let c = texture(f.x, f.y);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                        hits += 1;
                    }
                }
            }
            if hits == 0 {
                continue;
            }
            let cover = hits as f64 / (s * s) as f64;
            let px = &mut data[(y * w + x) * 3..(y * w + x) * 3 + 3];
            for k in 0..3 {
                px[k] = px[k] * (1.0 - cover) + acc[k] / (s * s) as f64;
            }
        }
    }
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let c0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (phi.cos(), phi.sin());
    let span = (w as f64 * dx.abs() + h as f64 * dy.abs()).max(1.0);
    let base = (0.0f64).min(w as f64 * dx) + (0.0f64).min(h as f64 * dy);
    let wave_amp = rng.gen_range(0.0..0.08);
    let wave_k = rng.gen_range(0.01..0.06);
    let wave_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 * dx + y as f64 * dy) - base) / span;
            let wave = wave_amp * ((x as f64 * wave_k + y as f64 * wave_k * 0.7) + wave_phase).sin();
            for k in 0..3 {
                data.push(c0[k] * (1.0 - t) + c1[k] * t + wave);
            }
        }
    }
    Tensor::new(&[h, w, 3], data).expect("sized above")
}

fn frontal_map(center: Point2, width: f64, height: f64, theta: f64, shear: f64) -> AffineMap {
    let shear = AffineMap::new(1.0, shear, 0.0, 1.0, 0.0, 0.0);
    AffineMap::translation(center.x, center.y)
        .compose(&AffineMap::rotation(theta))
        .compose(&shear)
        .compose(&AffineMap::translation(-width / 2.0, -height / 2.0))
}

fn overlaps(a: &Quad, b: &Quad) -> bool {
    clip_convex(&Polygon::from(a), &Polygon::from(b)).area() > 0.0
}

/// Tries to place one plate inside the frame without touching `taken`.
fn place_plate(rng: &mut ChaCha8Rng, cfg: &SynthConfig, taken: &[Quad]) -> Option<PlateMeta> {
    let (h, w) = (cfg.image_height as f64, cfg.image_width as f64);
    let fit = 0.9 * w.min(h);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let width = rng.gen_range(cfg.plate_width[0]..=cfg.plate_width[1].min(fit).max(cfg.plate_width[0]));
        let a_hi = cfg.plate_aspect[1].min(width / MIN_SIDE).max(cfg.plate_aspect[0]);
        let aspect = rng.gen_range(cfg.plate_aspect[0]..=a_hi);
        let height = width / aspect;
        let theta = rng.gen_range(-1.0..=1.0) * cfg.max_rotation_deg.to_radians();
        let shear = rng.gen_range(-1.0..=1.0) * cfg.max_shear;
        let local = frontal_map(Point2::new(0.0, 0.0), width, height, theta, shear);
        let rel = [
            Point2::new(0.0, 0.0),
            Point2::new(width, 0.0),
            Point2::new(width, height),
            Point2::new(0.0, height),
        ]
        .map(|p| local.apply(p));
        let lo_x = 1.0 - rel.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let hi_x = w - 2.0 - rel.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = 1.0 - rel.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi_y = h - 2.0 - rel.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let center = Point2::new(rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y));
        let to_image = frontal_map(center, width, height, theta, shear);
        let corners = [
            Point2::new(0.0, 0.0),
            Point2::new(width, 0.0),
            Point2::new(width, height),
            Point2::new(0.0, height),
        ]
        .map(|p| to_image.apply(p));
        let Ok(quad) = Quad::from_unordered(corners) else { continue };
        if quad.min_side() < MIN_SIDE || taken.iter().any(|t| overlaps(t, &quad)) {
            continue;
        }
        return Some(PlateMeta {
            to_image,
            width,
            height,
            quad,
        });
    }
    None
}

/// Renders one scene and returns the frontal geometry of every plate.
pub fn synth_scene_with_meta(cfg: &SynthConfig, seed: u64) -> (Sample, Vec<PlateMeta>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.image_height, cfg.image_width);
    let mut image = background(&mut rng, h, w);

    for _ in 0..cfg.clutter {
        let cw = rng.gen_range(0.05..0.3) * w as f64;
        let ch = rng.gen_range(0.05..0.3) * h as f64;
        let map = AffineMap::translation(rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64))
            .compose(&AffineMap::rotation(rng.gen_range(-0.5..0.5)))
            .compose(&AffineMap::translation(-cw / 2.0, -ch / 2.0));
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        render_warped(&mut image, &map, cw, ch, 2, |_, _| color);
    }

    let count = rng.gen_range(cfg.min_plates..=cfg.max_plates);
    let mut plates: Vec<PlateMeta> = Vec::with_capacity(count);
    for _ in 0..count {
        let taken: Vec<Quad> = plates.iter().map(|p| p.quad).collect();
        let Some(meta) = place_plate(&mut rng, cfg, &taken) else { continue };
        let style = PlateStyle::random(&mut rng, cfg.glyphs);
        let (pw, ph) = (meta.width, meta.height);
        render_warped(&mut image, &meta.to_image, pw, ph, 2, |u, v| style.paint(u / pw, v / ph));
        plates.push(meta);
    }

    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for v in image.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let quads = plates.iter().map(|p| p.quad).collect();
    (Sample::new(image, quads, format!("synth-{seed}")), plates)
}

pub fn synth_scene(cfg: &SynthConfig, seed: u64) -> Sample {
    synth_scene_with_meta(cfg, seed).0
}
