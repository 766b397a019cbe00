//! Four-corner annotation files.
//!
//! One record per line: `<image_path> x1 y1 x2 y2 x3 y3 x4 y4`, separated by
//! whitespace. An image may appear on several lines. Lines starting with `#`
//! and blank lines are ignored. Corners may be listed in any order; they are
//! canonicalized on read.

use std::fs;
use std::path::Path;

use crate::error::AnnotationError;
use crate::geometry::{Point2, Quad};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_path: String,
    pub quads: Vec<Quad>,
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>, AnnotationError> {
    parse_annotation_text(&fs::read_to_string(path)?)
}

/// Groups records by image path in first-appearance order.
pub fn parse_annotation_text(text: &str) -> Result<Vec<AnnotatedImage>, AnnotationError> {
    let mut out: Vec<AnnotatedImage> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| AnnotationError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let nums = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let pts = [0, 1, 2, 3].map(|k| Point2::new(nums[2 * k], nums[2 * k + 1]));
        let quad = Quad::from_unordered(pts).map_err(|e| err(format!("invalid quad: {e}")))?;
        let image_path = fields[0].to_string();
        match out.iter_mut().find(|a| a.image_path == image_path) {
            Some(a) => a.quads.push(quad),
            None => out.push(AnnotatedImage {
                image_path,
                quads: vec![quad],
            }),
        }
    }
    Ok(out)
}

pub fn format_quad_line(image_path: &str, q: &Quad) -> String {
    let mut s = image_path.to_string();
    for p in &q.corners {
        s.push_str(&format!(" {} {}", p.x, p.y));
    }
    s
}

/// Serializes records; `f64` values use shortest round-trip formatting, so
/// parsing the output reproduces canonical quads exactly.
pub fn write_annotation_text(records: &[AnnotatedImage]) -> String {
    let mut s = String::new();
    for r in records {
        for q in &r.quads {
            s.push_str(&format_quad_line(&r.image_path, q));
            s.push('\n');
        }
    }
    s
}

pub fn write_annotations(path: impl AsRef<Path>, records: &[AnnotatedImage]) -> std::io::Result<()> {
    fs::write(path, write_annotation_text(records))
}
