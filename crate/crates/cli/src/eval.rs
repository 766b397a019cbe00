//! qIoU evaluation reports.

use std::fmt::Write as _;

use wpod_core::dataset::{letterbox, Sample};
use wpod_core::train::detect;
use wpod_core::{qiou, Detection, Model, Quad, Tensor};

use crate::error::CliError;

/// Detections scoring below this qIoU against every ground-truth quad count
/// as false positives.
pub const FALSE_POSITIVE_QIOU: f64 = 0.5;

/// Images per forward pass during evaluation.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GtMatch {
    pub gt: Quad,
    /// qIoU with the matched detection; 0 when unmatched.
    pub qiou: f64,
    pub detection: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub matches: Vec<GtMatch>,
    pub detections: Vec<Detection>,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageEval>,
    /// Mean over ground-truth quads; unmatched quads score 0.
    pub mean_qiou: f64,
    pub gt_count: usize,
    pub detection_count: usize,
    pub false_positive_count: usize,
    /// Inputs that could not be read.
    pub skipped: usize,
}

/// Greedy one-to-one matching: pairs are taken in decreasing qIoU order and
/// neither side is reused. Returns, per ground-truth quad, the matched
/// detection index and its qIoU.
pub fn match_greedy(gts: &[Quad], dets: &[Quad]) -> Vec<(Option<usize>, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, g) in gts.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            let v = qiou(g, d);
            if v > 0.0 {
                pairs.push((i, j, v));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut out = vec![(None, 0.0); gts.len()];
    let mut used = vec![false; dets.len()];
    for (i, j, v) in pairs {
        if out[i].0.is_none() && !used[j] {
            out[i] = (Some(j), v);
            used[j] = true;
        }
    }
    out
}

pub fn evaluate_image(id: &str, gts: &[Quad], detections: Vec<Detection>) -> ImageEval {
    let quads: Vec<Quad> = detections.iter().map(|d| d.quad).collect();
    let matches = match_greedy(gts, &quads)
        .into_iter()
        .zip(gts)
        .map(|((detection, qiou), gt)| GtMatch {
            gt: *gt,
            qiou,
            detection,
        })
        .collect();
    let false_positives = quads
        .iter()
        .filter(|d| gts.iter().all(|g| qiou(g, d) < FALSE_POSITIVE_QIOU))
        .count();
    ImageEval {
        id: id.to_string(),
        matches,
        detections,
        false_positives,
    }
}

impl EvalReport {
    pub fn from_images(per_image: Vec<ImageEval>, skipped: usize) -> Self {
        let gt_count = per_image.iter().map(|i| i.matches.len()).sum();
        let total: f64 = per_image.iter().flat_map(|i| &i.matches).map(|m| m.qiou).sum();
        let mean_qiou = if gt_count == 0 { 0.0 } else { total / gt_count as f64 };
        Self {
            detection_count: per_image.iter().map(|i| i.detections.len()).sum(),
            false_positive_count: per_image.iter().map(|i| i.false_positives).sum(),
            per_image,
            mean_qiou,
            gt_count,
            skipped,
        }
    }

    pub const CSV_HEADER: &'static str = "image,gt_index,qiou,detection_index,detection_confidence";

    /// One row per ground-truth quad.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for img in &self.per_image {
            for (k, m) in img.matches.iter().enumerate() {
                let (idx, conf) = match m.detection {
                    Some(j) => (j.to_string(), img.detections[j].confidence.to_string()),
                    None => (String::new(), String::new()),
                };
                let _ = writeln!(s, "{},{},{},{},{}", img.id, k, m.qiou, idx, conf);
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "images: {}  ground truth: {}  detections: {}  false positives: {}  skipped: {}\nmean qIoU: {:.2}%",
            self.per_image.len(),
            self.gt_count,
            self.detection_count,
            self.false_positive_count,
            self.skipped,
            100.0 * self.mean_qiou
        )
    }
}

/// Runs the model on every sample (letterboxed to its input size) and scores
/// the detections in source image coordinates.
pub fn evaluate_model(
    model: &Model,
    samples: &[Sample],
    threshold: f64,
    nms_threshold: f64,
    skipped: usize,
) -> Result<EvalReport, CliError> {
    let (h, w) = (model.config().input_height, model.config().input_width);
    let mut per_image = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let boxed: Vec<_> = chunk.iter().map(|s| letterbox(s, h, w)).collect();
        let images: Vec<Tensor> = boxed.iter().map(|(s, _)| s.image.clone()).collect();
        let stacked = Tensor::stack(&images).map_err(|e| CliError::Validation(e.to_string()))?;
        let dets = detect(model, &stacked, threshold, nms_threshold).map_err(|e| CliError::Validation(e.to_string()))?;
        for ((sample, (_, lb)), d) in chunk.iter().zip(&boxed).zip(dets) {
            let mapped = d
                .into_iter()
                .map(|det| Detection {
                    quad: lb.quad_to_source(&det.quad),
                    ..det
                })
                .collect();
            per_image.push(evaluate_image(&sample.id, &sample.quads, mapped));
        }
    }
    Ok(EvalReport::from_images(per_image, skipped))
}

/// Table with one row per model and a delta column relative to the first.
pub fn comparison_table(rows: &[(String, f64)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}  {:>9}  {:>9}\n", "Model", "qIoU", "Delta");
    let _ = writeln!(s, "{}", "-".repeat(width + 22));
    let base = rows.first().map(|r| r.1).unwrap_or(0.0);
    for (i, (name, q)) in rows.iter().enumerate() {
        let delta = if i == 0 {
            "-".to_string()
        } else {
            format!("{:+.2}%", 100.0 * (q - base))
        };
        let _ = writeln!(s, "{:<width$}  {:>8.2}%  {:>9}", name, 100.0 * q, delta);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Quad {
        Quad::rect(x0, y0, x1, y1).unwrap()
    }

    fn det(q: Quad, c: f64) -> Detection {
        Detection {
            quad: q,
            confidence: c,
            source_cell: (0, 0),
        }
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts = [rect(0., 0., 10., 5.), rect(20., 20., 40., 30.)];
        let e = evaluate_image("a", &gts, gts.iter().map(|q| det(*q, 0.9)).collect());
        let r = EvalReport::from_images(vec![e], 0);
        assert_eq!(r.mean_qiou, 1.0);
        assert_eq!(r.false_positive_count, 0);
        assert_eq!(r.detection_count, 2);
    }

    #[test]
    fn no_detections_score_zero() {
        let e = evaluate_image("a", &[rect(0., 0., 10., 5.)], vec![]);
        let r = EvalReport::from_images(vec![e], 0);
        assert_eq!((r.mean_qiou, r.detection_count), (0.0, 0));
    }

    #[test]
    fn greedy_matching_does_not_reuse() {
        let gts = [rect(0., 0., 10., 10.), rect(1., 0., 11., 10.)];
        let dets = [rect(0., 0., 10., 10.)];
        let m = match_greedy(&gts, &dets);
        assert_eq!(m[0], (Some(0), 1.0));
        assert_eq!(m[1].0, None);
    }

    #[test]
    fn false_positives_and_csv_mean() {
        let gts = [rect(0., 0., 10., 10.)];
        let e = evaluate_image(
            "img",
            &gts,
            vec![det(rect(0., 0., 10., 5.), 0.8), det(rect(50., 50., 60., 60.), 0.7)],
        );
        assert_eq!(e.false_positives, 1);
        let r = EvalReport::from_images(vec![e, evaluate_image("empty", &[], vec![])], 1);
        let csv = r.to_csv();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 1);
        let mean: f64 = rows.iter().map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum::<f64>()
            / rows.len() as f64;
        assert_eq!(mean, r.mean_qiou);
        assert_eq!(r.mean_qiou, 0.5);
    }

    #[test]
    fn comparison_has_delta_column() {
        let t = comparison_table(&[("baseline".into(), 0.80), ("edge_augmented".into(), 0.815)]);
        assert!(t.contains("Delta"));
        assert!(t.contains("+1.50%"), "{t}");
        assert_eq!(t.lines().count(), 4);
    }
}
