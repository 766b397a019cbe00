//! Canonical square, per-cell affine decode, annotation normalization,
//! training targets, the location and confidence losses, detection decoding
//! and plate rectification.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{GeometryError, LossError, ShapeError};
use crate::geometry::{nms, AffineMap, Point2, Quad};
use crate::net::{FeatureGrid, GRID_CHANNELS};
use crate::nn::{softmax2, Graph, Tensor, Var};

/// Corners of the unit square centered at the origin, in quad order.
pub const CANONICAL_SQUARE: [Point2; 4] = [
    Point2::new(-0.5, -0.5),
    Point2::new(0.5, -0.5),
    Point2::new(0.5, 0.5),
    Point2::new(-0.5, 0.5),
];

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Builds the cell's affine map from `v3..v8`; the diagonal is clamped at 0.
pub fn decode_affine(v: &[f64]) -> AffineMap {
    assert_eq!(v.len(), 6, "decode_affine takes v3..v8");
    AffineMap::new(v[0].max(0.0), v[1], v[2], v[3].max(0.0), v[4], v[5])
}

/// Maps an image point into the frame of cell `(m, n)`:
/// `(p / stride - (n, m)) / alpha`.
pub fn normalize_point(p: Point2, m: usize, n: usize, stride: f64, alpha: f64) -> Point2 {
    Point2::new(
        (p.x / stride - n as f64) / alpha,
        (p.y / stride - m as f64) / alpha,
    )
}

/// Inverse of [`normalize_point`]: `stride * (alpha * u + (n, m))`.
pub fn denormalize_point(u: Point2, m: usize, n: usize, stride: f64, alpha: f64) -> Point2 {
    Point2::new(
        stride * (alpha * u.x + n as f64),
        stride * (alpha * u.y + m as f64),
    )
}

/// Geometry shared by target construction and decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub stride: f64,
    pub alpha: f64,
}

impl GridSpec {
    pub fn new(stride: usize, alpha: f64) -> Self {
        Self {
            stride: stride as f64,
            alpha,
        }
    }

    pub fn normalize(&self, p: Point2, m: usize, n: usize) -> Point2 {
        normalize_point(p, m, n, self.stride, self.alpha)
    }

    pub fn denormalize(&self, u: Point2, m: usize, n: usize) -> Point2 {
        denormalize_point(u, m, n, self.stride, self.alpha)
    }

    /// Pixel at the center of cell `(m, n)`.
    pub fn cell_center(&self, m: usize, n: usize) -> Point2 {
        let half = self.stride / 2.0;
        Point2::new(self.stride * n as f64 + half, self.stride * m as f64 + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub m: usize,
    pub n: usize,
    /// Normalized corners of the responsible object; `None` for background.
    pub corners: Option<[Point2; 4]>,
}

impl CellTarget {
    pub fn is_object(&self) -> bool {
        self.corners.is_some()
    }
}

/// Per-image `M x N` training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<CellTarget>,
}

impl TargetGrid {
    pub fn cell(&self, m: usize, n: usize) -> &CellTarget {
        &self.cells[m * self.cols + n]
    }

    pub fn positive_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_object()).count()
    }
}

/// Marks a cell positive when its center pixel lies inside an annotation quad;
/// among several quads the one with the nearest centroid wins. A quad that
/// covers no cell center is assigned to the cell containing its centroid, if
/// that cell is still free.
pub fn build_target_grid(
    annotations: &[Quad],
    height: usize,
    width: usize,
    spec: GridSpec,
) -> TargetGrid {
    let stride = spec.stride as usize;
    let (rows, cols) = (height / stride, width / stride);
    let mut owner: Vec<Option<usize>> = vec![None; rows * cols];
    for m in 0..rows {
        for n in 0..cols {
            let c = spec.cell_center(m, n);
            owner[m * cols + n] = annotations
                .iter()
                .enumerate()
                .filter(|(_, q)| q.contains(c))
                .min_by(|(_, a), (_, b)| {
                    a.centroid().dist(&c).total_cmp(&b.centroid().dist(&c))
                })
                .map(|(i, _)| i);
        }
    }
    for (i, q) in annotations.iter().enumerate() {
        if owner.contains(&Some(i)) {
            continue;
        }
        let c = q.centroid();
        if c.x < 0.0 || c.y < 0.0 {
            continue;
        }
        let (m, n) = ((c.y / spec.stride) as usize, (c.x / spec.stride) as usize);
        if m < rows && n < cols && owner[m * cols + n].is_none() {
            owner[m * cols + n] = Some(i);
        }
    }
    let cells = (0..rows * cols)
        .map(|idx| {
            let (m, n) = (idx / cols, idx % cols);
            CellTarget {
                m,
                n,
                corners: owner[idx].map(|i| annotations[i].corners.map(|p| spec.normalize(p, m, n))),
            }
        })
        .collect();
    TargetGrid { rows, cols, cells }
}

/// Sum over the four canonical corners of the squared distance between the
/// mapped corner and the normalized target corner.
pub fn location_loss(v: &[f64], target: &CellTarget) -> Result<f64, LossError> {
    let corners = target.corners.ok_or(LossError::NegativeCell)?;
    Ok(location_loss_grad(v, &corners).0)
}

/// Location loss and its gradient with respect to `v3..v8`.
fn location_loss_grad(v: &[f64], corners: &[Point2; 4]) -> (f64, [f64; 6]) {
    let t = decode_affine(v);
    let mut loss = 0.0;
    let mut g = [0.0; 6];
    for (q, a) in CANONICAL_SQUARE.iter().zip(corners) {
        let p = t.apply(*q);
        let (ex, ey) = (p.x - a.x, p.y - a.y);
        loss += ex * ex + ey * ey;
        if v[0] > 0.0 {
            g[0] += 2.0 * ex * q.x;
        }
        g[1] += 2.0 * ex * q.y;
        g[2] += 2.0 * ey * q.x;
        if v[3] > 0.0 {
            g[3] += 2.0 * ey * q.y;
        }
        g[4] += 2.0 * ex;
        g[5] += 2.0 * ey;
    }
    (loss, g)
}

/// Two-term log loss over the softmax of the object/non-object logits.
pub fn confidence_loss(v1: f64, v2: f64, object: bool) -> f64 {
    confidence_loss_grad(v1, v2, object).0
}

/// Loss, gradient w.r.t. `(v1, v2)`, and whether the probability clamp was hit.
fn confidence_loss_grad(v1: f64, v2: f64, object: bool) -> (f64, [f64; 2], bool) {
    let (p_obj, p_bg) = softmax2(v1, v2);
    let p = if object { p_obj } else { p_bg };
    // -ln p as a stable log-sum-exp, capped at -ln(PROB_FLOOR).
    let (own, rival) = if object { (v1, v2) } else { (v2, v1) };
    let d = rival - own;
    let nll = d.max(0.0) + (-d.abs()).exp().ln_1p();
    let cap = -PROB_FLOOR.ln();
    if nll > cap {
        return (cap, [0.0, 0.0], true);
    }
    let loss = nll;
    // d(-ln p_target)/d logits = softmax - onehot.
    let other = 1.0 - p;
    let g = if object { [-other, other] } else { [other, -other] };
    (loss, g, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub location: f64,
    pub confidence: f64,
    pub total: f64,
    pub positive_cell_count: usize,
}

/// Loss over a batch grid and its gradient with respect to every grid value.
pub struct LossEval {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
    /// Fingerprint of the diagonal clamps and probability clamps.
    pub kinks: u64,
}

/// `sum over images, cells of [I_obj * location + confidence]`.
pub fn total_loss(grid: &FeatureGrid, targets: &[TargetGrid]) -> Result<LossEval, LossError> {
    let (rows, cols) = grid.size();
    if targets.len() != grid.batch() {
        return Err(ShapeError::mismatch(
            "total_loss",
            format!("{} target grids", grid.batch()),
            &[targets.len()],
        )
        .into());
    }
    let mut grad = vec![0.0; grid.values.len()];
    let mut out = LossBreakdown::default();
    let mut hasher = DefaultHasher::new();
    for (b, t) in targets.iter().enumerate() {
        if (t.rows, t.cols) != (rows, cols) {
            return Err(ShapeError::mismatch(
                "total_loss",
                format!("{rows}x{cols} targets"),
                &[t.rows, t.cols],
            )
            .into());
        }
        for cell in &t.cells {
            let v = grid.cell(b, cell.m, cell.n);
            let base = ((b * rows + cell.m) * cols + cell.n) * GRID_CHANNELS;
            let (cl, cg, clamped) = confidence_loss_grad(v[0], v[1], cell.is_object());
            out.confidence += cl;
            grad[base] += cg[0];
            grad[base + 1] += cg[1];
            clamped.hash(&mut hasher);
            if let Some(corners) = &cell.corners {
                let (ll, lg) = location_loss_grad(&v[2..], corners);
                out.location += ll;
                out.positive_cell_count += 1;
                for (k, gk) in lg.iter().enumerate() {
                    grad[base + 2 + k] += gk;
                }
                (v[2] > 0.0, v[5] > 0.0).hash(&mut hasher);
            }
        }
    }
    out.total = out.location + out.confidence;
    Ok(LossEval {
        breakdown: out,
        grad,
        kinks: hasher.finish(),
    })
}

/// Appends the loss to a graph as a differentiable scalar node.
pub fn total_loss_node(
    g: &mut Graph,
    grid: Var,
    targets: &[TargetGrid],
) -> Result<(Var, LossBreakdown), LossError> {
    let fg = FeatureGrid::new(g.value(grid).clone())?;
    let eval = total_loss(&fg, targets)?;
    let v = g.scalar_with_grad(grid, eval.breakdown.total, eval.grad, eval.kinks)?;
    Ok((v, eval.breakdown))
}

/// Least-squares `v3..v8` whose affine map carries the canonical square onto
/// `quad` normalized at cell `(m, n)`.
pub fn fit_cell_values(quad: &Quad, m: usize, n: usize, spec: GridSpec) -> Result<[f64; 6], GeometryError> {
    let target = quad.corners.map(|p| spec.normalize(p, m, n));
    let t = AffineMap::fit(&CANONICAL_SQUARE, &target)?;
    Ok([t.a11, t.a12, t.a21, t.a22, t.tx, t.ty])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub quad: Quad,
    pub confidence: f64,
    pub source_cell: (usize, usize),
}

/// Quads from every cell of image `b` whose object probability exceeds
/// `threshold`, after non-maximum suppression.
pub fn decode_detections(
    grid: &FeatureGrid,
    b: usize,
    threshold: f64,
    nms_threshold: f64,
    spec: GridSpec,
) -> Vec<Detection> {
    let (rows, cols) = grid.size();
    let mut cands = Vec::new();
    for m in 0..rows {
        for n in 0..cols {
            let v = grid.cell(b, m, n);
            let (p_obj, _) = softmax2(v[0], v[1]);
            if p_obj <= threshold {
                continue;
            }
            let t = decode_affine(&v[2..]);
            let corners = CANONICAL_SQUARE.map(|q| spec.denormalize(t.apply(q), m, n));
            let Ok(quad) = Quad::new(corners) else { continue };
            if quad.area() > 0.0 {
                cands.push((quad, p_obj, (m, n)));
            }
        }
    }
    nms(&cands, nms_threshold)
        .into_iter()
        .map(|(quad, confidence, source_cell)| Detection {
            quad,
            confidence,
            source_cell,
        })
        .collect()
}

/// Bilinear sample of channel `c` with clamp-to-edge borders.
#[inline]
pub fn sample_bilinear(img: &Tensor, x: f64, y: f64, c: usize) -> f64 {
    let s = img.shape();
    let (h, w, ch) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let d = img.data();
    let at = |yy: usize, xx: usize| d[(yy * w + xx) * ch + c];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Output-to-source map used by [`rectify_plate`]: the inverse of the
/// least-squares affine taking the quad corners to the output rectangle
/// `(0,0), (w,0), (w,h), (0,h)`.
pub fn rectification_map(quad: &Quad, out_w: usize, out_h: usize) -> Result<AffineMap, GeometryError> {
    let (w, h) = (out_w as f64, out_h as f64);
    let rect = [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ];
    AffineMap::fit(&quad.corners, &rect)?.invert()
}

/// Warps the quad region of an `H x W x C` (or `1 x H x W x C`) image to a
/// frontal `out_h x out_w x C` crop.
pub fn rectify_plate(image: &Tensor, quad: &Quad, out_w: usize, out_h: usize) -> Result<Tensor, LossError> {
    if out_w == 0 || out_h == 0 {
        return Err(ShapeError::mismatch("rectify_plate", "output dims >= 1", &[out_h, out_w]).into());
    }
    let s = image.shape();
    let ok = matches!(s, [_, _, _] | [1, _, _, _]);
    if !ok {
        return Err(ShapeError::mismatch("rectify_plate", "single H x W x C image", s).into());
    }
    let ch = s[s.len() - 1];
    let map = rectification_map(quad, out_w, out_h).map_err(|_| {
        ShapeError::mismatch("rectify_plate", "non-degenerate quad", &[])
    })?;
    let mut out = Vec::with_capacity(out_w * out_h * ch);
    for y in 0..out_h {
        for x in 0..out_w {
            let p = map.apply(Point2::new(x as f64, y as f64));
            for c in 0..ch {
                out.push(sample_bilinear(image, p.x, p.y, c));
            }
        }
    }
    Ok(Tensor::new(&[out_h, out_w, ch], out)?)
}
