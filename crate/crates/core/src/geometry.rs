//! Planar geometry for quadrilaterals: areas, convex clipping, qIoU,
//! affine maps and non-maximum suppression.
//!
//! Coordinates are image coordinates (x to the right, y downwards). A [`Quad`]
//! lists its corners top-left, top-right, bottom-right, bottom-left, which is
//! clockwise on screen and yields positive edge cross products in (x, y).

use std::fmt;

use crate::error::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// z-component of (b - a) x (c - a).
#[inline]
fn cross(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Signed shoelace area; positive for screen-clockwise (TL, TR, BR, BL) order.
pub fn signed_area(vertices: &[Point2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, p) in vertices.iter().enumerate() {
        let q = vertices[(i + 1) % vertices.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    0.5 * acc
}

/// Absolute shoelace area. Degenerate inputs (fewer than three vertices,
/// collinear points) give 0.
pub fn polygon_area(vertices: &[Point2]) -> f64 {
    signed_area(vertices).abs()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }
}

impl From<&Quad> for Polygon {
    fn from(q: &Quad) -> Self {
        Polygon::new(q.corners.to_vec())
    }
}

/// Four corners of a convex planar region.
///
/// Corners are stored in the order given to [`Quad::new`], which must be
/// screen-clockwise. [`Quad::from_unordered`] produces the canonical order
/// starting at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [Point2; 4],
}

impl Quad {
    /// Validates finiteness, strict convexity and screen-clockwise orientation.
    pub fn new(corners: [Point2; 4]) -> Result<Self, GeometryError> {
        if corners.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        for i in 0..4 {
            let c = cross(corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
            if c <= 0.0 {
                return if signed_area(&corners) < 0.0 {
                    Err(GeometryError::WrongOrientation)
                } else if signed_area(&corners).abs() <= f64::EPSILON {
                    Err(GeometryError::Degenerate)
                } else {
                    Err(GeometryError::NotConvex)
                };
            }
        }
        Ok(Self { corners })
    }

    /// Sorts corners by angle around the centroid, then rotates the sequence so
    /// the top-left-most corner (smallest x + y) comes first.
    pub fn from_unordered(points: [Point2; 4]) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let cx = points.iter().map(|p| p.x).sum::<f64>() / 4.0;
        let cy = points.iter().map(|p| p.y).sum::<f64>() / 4.0;
        let mut sorted = points;
        // Increasing atan2 in y-down coordinates is clockwise on screen.
        sorted.sort_by(|a, b| {
            let ta = (a.y - cy).atan2(a.x - cx);
            let tb = (b.y - cy).atan2(b.x - cx);
            ta.total_cmp(&tb)
        });
        let start = (0..4)
            .min_by(|&i, &j| {
                let si = sorted[i].x + sorted[i].y;
                let sj = sorted[j].x + sorted[j].y;
                si.total_cmp(&sj).then(sorted[i].x.total_cmp(&sorted[j].x))
            })
            .unwrap_or(0);
        sorted.rotate_left(start);
        Quad::new(sorted)
    }

    /// Axis-aligned rectangle with top-left `(x0, y0)` and bottom-right `(x1, y1)`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Quad::new([
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.corners)
    }

    pub fn centroid(&self) -> Point2 {
        let x = self.corners.iter().map(|p| p.x).sum::<f64>() / 4.0;
        let y = self.corners.iter().map(|p| p.y).sum::<f64>() / 4.0;
        Point2::new(x, y)
    }

    /// Inside or on the boundary.
    pub fn contains(&self, p: Point2) -> bool {
        point_in_convex(&self.corners, p)
    }

    pub fn map(&self, t: &AffineMap) -> [Point2; 4] {
        self.corners.map(|p| t.apply(p))
    }

    /// Same corner cycle rotated to start at index `k`.
    pub fn rotated(&self, k: usize) -> Quad {
        let mut c = self.corners;
        c.rotate_left(k % 4);
        Quad { corners: c }
    }

    /// Smallest side length, used to reject slivers.
    pub fn min_side(&self) -> f64 {
        (0..4)
            .map(|i| self.corners[i].dist(&self.corners[(i + 1) % 4]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Point-in-convex-polygon test for either orientation; the boundary counts as
/// inside.
pub fn point_in_convex(vertices: &[Point2], p: Point2) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut pos = false;
    let mut neg = false;
    for i in 0..n {
        let c = cross(vertices[i], vertices[(i + 1) % n], p);
        if c > 0.0 {
            pos = true;
        } else if c < 0.0 {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    true
}

/// Sutherland-Hodgman clip of `subject` against the convex `clip` polygon.
///
/// Both inputs must be convex; the orientation of `clip` is detected, so
/// either winding works. The result is empty when the regions are disjoint.
pub fn clip_convex(subject: &Polygon, clip: &Polygon) -> Polygon {
    let clip_v = &clip.vertices;
    if subject.is_empty() || clip.is_empty() {
        return Polygon::default();
    }
    let orient = signed_area(clip_v).signum();
    if orient == 0.0 {
        return Polygon::default();
    }
    let mut output = subject.vertices.clone();
    for i in 0..clip_v.len() {
        if output.is_empty() {
            break;
        }
        let a = clip_v[i];
        let b = clip_v[(i + 1) % clip_v.len()];
        let inside = |p: Point2| orient * cross(a, b, p) >= 0.0;
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().expect("non-empty");
        for &cur in &input {
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
            prev = cur;
        }
    }
    if output.len() < 3 {
        return Polygon::default();
    }
    Polygon::new(output)
}

/// Intersection of segment p-q with the infinite line through a-b.
fn line_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let denom = cp - cq;
    if denom == 0.0 {
        return q;
    }
    let t = cp / denom;
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// IoU of two convex polygons given as vertex slices. Two zero-area inputs
/// give 0 rather than NaN.
pub fn convex_iou(a: &[Point2], b: &[Point2]) -> f64 {
    let area_a = polygon_area(a);
    let area_b = polygon_area(b);
    if area_a <= 0.0 && area_b <= 0.0 {
        return 0.0;
    }
    let inter = clip_convex(&Polygon::new(a.to_vec()), &Polygon::new(b.to_vec())).area();
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Quadrilateral intersection over union.
pub fn qiou(a: &Quad, b: &Quad) -> f64 {
    if a == b {
        return 1.0;
    }
    convex_iou(&a.corners, &b.corners)
}

/// `p -> L p + t` with `L = [[a11, a12], [a21, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64, tx: f64, ty: f64) -> Self {
        Self {
            a11,
            a12,
            a21,
            a22,
            tx,
            ty,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0, tx, ty)
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self::new(sx, 0.0, 0.0, sy, 0.0, 0.0)
    }

    /// Rotation by `radians` (screen-clockwise for positive angles, since y
    /// points down).
    pub fn rotation(radians: f64) -> Self {
        let (s, c) = radians.sin_cos();
        Self::new(c, -s, s, c, 0.0, 0.0)
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            self.a11 * p.x + self.a12 * p.y + self.tx,
            self.a21 * p.x + self.a22 * p.y + self.ty,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_finite(&self) -> bool {
        [self.a11, self.a12, self.a21, self.a22, self.tx, self.ty]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        AffineMap::new(
            self.a11 * inner.a11 + self.a12 * inner.a21,
            self.a11 * inner.a12 + self.a12 * inner.a22,
            self.a21 * inner.a11 + self.a22 * inner.a21,
            self.a21 * inner.a12 + self.a22 * inner.a22,
            self.a11 * inner.tx + self.a12 * inner.ty + self.tx,
            self.a21 * inner.tx + self.a22 * inner.ty + self.ty,
        )
    }

    pub fn invert(&self) -> Result<AffineMap, GeometryError> {
        let det = self.determinant();
        let scale = self
            .a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs());
        if det == 0.0 || !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
            return Err(GeometryError::SingularMap(det));
        }
        let i11 = self.a22 / det;
        let i12 = -self.a12 / det;
        let i21 = -self.a21 / det;
        let i22 = self.a11 / det;
        Ok(AffineMap::new(
            i11,
            i12,
            i21,
            i22,
            -(i11 * self.tx + i12 * self.ty),
            -(i21 * self.tx + i22 * self.ty),
        ))
    }

    /// Least-squares affine map taking each `src[i]` to `dst[i]`.
    ///
    /// Solves the 3x3 normal equations shared by the x and y rows.
    pub fn fit(src: &[Point2], dst: &[Point2]) -> Result<AffineMap, GeometryError> {
        assert_eq!(src.len(), dst.len(), "correspondence count mismatch");
        if src.len() < 3 {
            return Err(GeometryError::SingularMap(0.0));
        }
        // Center for conditioning.
        let n = src.len() as f64;
        let sc = Point2::new(
            src.iter().map(|p| p.x).sum::<f64>() / n,
            src.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let dc = Point2::new(
            dst.iter().map(|p| p.x).sum::<f64>() / n,
            dst.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        let (mut bx_x, mut bx_y, mut by_x, mut by_y) = (0.0, 0.0, 0.0, 0.0);
        for (s, d) in src.iter().zip(dst) {
            let (x, y) = (s.x - sc.x, s.y - sc.y);
            let (u, v) = (d.x - dc.x, d.y - dc.y);
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
            bx_x += x * u;
            bx_y += y * u;
            by_x += x * v;
            by_y += y * v;
        }
        let det = sxx * syy - sxy * sxy;
        let scale = (sxx + syy).max(f64::MIN_POSITIVE);
        if det.abs() <= 1e-12 * scale * scale {
            return Err(GeometryError::SingularMap(det));
        }
        let a11 = (syy * bx_x - sxy * bx_y) / det;
        let a12 = (sxx * bx_y - sxy * bx_x) / det;
        let a21 = (syy * by_x - sxy * by_y) / det;
        let a22 = (sxx * by_y - sxy * by_x) / det;
        let tx = dc.x - (a11 * sc.x + a12 * sc.y);
        let ty = dc.y - (a21 * sc.x + a22 * sc.y);
        Ok(AffineMap::new(a11, a12, a21, a22, tx, ty))
    }
}

pub fn apply_affine(t: &AffineMap, p: Point2) -> Point2 {
    t.apply(p)
}

pub fn invert_affine(t: &AffineMap) -> Result<AffineMap, GeometryError> {
    t.invert()
}

/// Greedy non-maximum suppression by descending confidence.
///
/// A detection is dropped when its qIoU with an already kept one exceeds
/// `overlap_threshold`. Output is sorted by descending confidence.
pub fn nms<T: Clone>(dets: &[(Quad, f64, T)], overlap_threshold: f64) -> Vec<(Quad, f64, T)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort keeps input order among equal confidences.
    order.sort_by(|&i, &j| dets[j].1.total_cmp(&dets[i].1));
    let mut kept: Vec<(Quad, f64, T)> = Vec::new();
    for i in order {
        let cand = &dets[i];
        if kept
            .iter()
            .all(|k| qiou(&k.0, &cand.0) <= overlap_threshold)
        {
            kept.push(cand.clone());
        }
    }
    kept
}

/// Reference IoU by pixel counting: the square `[x0, x0 + size]^2` is split
/// into `resolution^2` pixels and each pixel center counts as inside a quad
/// when it lies on or within its boundary. Rows are counted with exact
/// scanline spans, so the cost is `O(resolution)`.
pub fn raster_iou(a: &Quad, b: &Quad, x0: f64, y0: f64, size: f64, resolution: usize) -> f64 {
    let step = size / resolution as f64;
    let count = |span: Option<(f64, f64)>| -> i64 {
        let Some((l, r)) = span else { return 0 };
        let first = ((l - x0) / step - 0.5).ceil().max(0.0) as i64;
        let last = (((r - x0) / step - 0.5).floor() as i64).min(resolution as i64 - 1);
        (last - first + 1).max(0)
    };
    let (mut ca, mut cb, mut ci) = (0i64, 0i64, 0i64);
    for row in 0..resolution {
        let y = y0 + (row as f64 + 0.5) * step;
        let sa = scanline_span(&a.corners, y);
        let sb = scanline_span(&b.corners, y);
        ca += count(sa);
        cb += count(sb);
        if let (Some(s), Some(t)) = (sa, sb) {
            let (l, r) = (s.0.max(t.0), s.1.min(t.1));
            if l <= r {
                ci += count(Some((l, r)));
            }
        }
    }
    let union = ca + cb - ci;
    if union == 0 {
        0.0
    } else {
        ci as f64 / union as f64
    }
}

/// x-extent of a convex polygon along the horizontal line at `y`.
fn scanline_span(vertices: &[Point2], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, a) in vertices.iter().enumerate() {
        let b = vertices[(i + 1) % vertices.len()];
        if a.y == b.y {
            if a.y == y {
                lo = lo.min(a.x.min(b.x));
                hi = hi.max(a.x.max(b.x));
            }
            continue;
        }
        if y < a.y.min(b.y) || y > a.y.max(b.y) {
            continue;
        }
        let x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo <= hi).then_some((lo, hi))
}
