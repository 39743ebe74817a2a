//! Geometry kernel for rectilinear polygons.
//!
//! Coordinates are screen-style: x grows right, y grows down. Outlines are
//! stored with positive shoelace area and parametrized by normalized arc
//! length u in [0,1), starting at the upper-left-most corner (minimal y,
//! ties broken by minimal x).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Layout scale: 256 units correspond to 18 meters.
pub const UNITS_PER_METER: f64 = 256.0 / 18.0;
pub const METERS_PER_UNIT: f64 = 18.0 / 256.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("polygon needs at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("edge {0} is not axis-aligned")]
    NotAxisAligned(usize),
    #[error("consecutive edges at vertex {0} do not alternate horizontal/vertical")]
    NotAlternating(usize),
    #[error("polygon self-intersects (edges {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("polygon has degenerate (near-zero) area")]
    DegenerateArea,
    #[error("arc parameter {0} outside [0,1)")]
    ParamOutOfRange(f64),
    #[error("sample count {got} below corner count {need}")]
    SampleCountTooSmall { need: usize, got: usize },
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("point ({0}, {1}) is not strictly inside the cage")]
    PointNotInsideCage(f64, f64),
    #[error("cages have different vertex counts ({0} vs {1})")]
    CageMismatch(usize, usize),
    #[error("rectangle region is not a simply connected rectilinear area")]
    NotSimpleRegion,
    #[error("coordinate is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn add(&self, other: &Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(&self, other: &Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(&self, f: f64) -> Point2 {
        Point2::new(self.x * f, self.y * f)
    }

    pub fn dot(&self, other: &Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: &Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// 90 degree rotation (x, y) -> (-y, x).
    pub fn rot90(&self) -> Point2 {
        Point2::new(-self.y, self.x)
    }
}

/// Axis-aligned rectangle, (x, y) is the upper-left corner (minimal coords).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix > 0.0 && iy > 0.0 {
            ix * iy
        } else {
            0.0
        }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// Simple rectilinear polygon with canonical orientation and start vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectPolygon {
    vertices: Vec<Point2>,
}

fn dedupe_and_merge(mut pts: Vec<Point2>) -> Vec<Point2> {
    // drop consecutive duplicates
    let mut out: Vec<Point2> = Vec::with_capacity(pts.len());
    for p in pts.drain(..) {
        if let Some(last) = out.last() {
            if last.dist(&p) < EPS {
                continue;
            }
        }
        out.push(p);
    }
    while out.len() > 1 && out[0].dist(out.last().unwrap()) < EPS {
        out.pop();
    }
    // merge collinear runs (axis-aligned collinearity)
    let mut merged: Vec<Point2> = Vec::with_capacity(out.len());
    let n = out.len();
    for i in 0..n {
        let prev = out[(i + n - 1) % n];
        let cur = out[i];
        let next = out[(i + 1) % n];
        let d1 = cur.sub(&prev);
        let d2 = next.sub(&cur);
        let collinear = (d1.x.abs() < EPS && d2.x.abs() < EPS)
            || (d1.y.abs() < EPS && d2.y.abs() < EPS);
        if !collinear {
            merged.push(cur);
        }
    }
    merged
}

fn seg_axis_intersects(a0: Point2, a1: Point2, b0: Point2, b1: Point2) -> bool {
    // overlap test for axis-aligned segments, touching endpoints allowed
    let (ax0, ax1) = (a0.x.min(a1.x), a0.x.max(a1.x));
    let (ay0, ay1) = (a0.y.min(a1.y), a0.y.max(a1.y));
    let (bx0, bx1) = (b0.x.min(b1.x), b0.x.max(b1.x));
    let (by0, by1) = (b0.y.min(b1.y), b0.y.max(b1.y));
    let ix0 = ax0.max(bx0);
    let ix1 = ax1.min(bx1);
    let iy0 = ay0.max(by0);
    let iy1 = ay1.min(by1);
    if ix0 > ix1 + EPS || iy0 > iy1 + EPS {
        return false;
    }
    // overlap region is a point or a segment; allow single shared endpoint only
    let px = (ix1 - ix0).abs() < EPS;
    let py = (iy1 - iy0).abs() < EPS;
    if px && py {
        // single point: only allowed if it is an endpoint of both segments
        let p = Point2::new(ix0, iy0);
        let ea = p.dist(&a0) < EPS || p.dist(&a1) < EPS;
        let eb = p.dist(&b0) < EPS || p.dist(&b1) < EPS;
        return !(ea && eb);
    }
    true
}

impl RectPolygon {
    /// Build a canonical rectilinear polygon from a vertex loop.
    /// Clockwise input loops are reversed; collinear vertices are merged.
    pub fn new(points: Vec<Point2>) -> Result<RectPolygon, GeomError> {
        for p in &points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(GeomError::NonFinite);
            }
        }
        let mut pts = dedupe_and_merge(points);
        if pts.len() < 4 {
            return Err(GeomError::TooFewVertices(pts.len()));
        }
        let n = pts.len();
        for i in 0..n {
            let d = pts[(i + 1) % n].sub(&pts[i]);
            if d.x.abs() >= EPS && d.y.abs() >= EPS {
                return Err(GeomError::NotAxisAligned(i));
            }
        }
        for i in 0..n {
            let d1 = pts[(i + 1) % n].sub(&pts[i]);
            let d2 = pts[(i + 2) % n].sub(&pts[(i + 1) % n]);
            let h1 = d1.y.abs() < EPS;
            let h2 = d2.y.abs() < EPS;
            if h1 == h2 {
                return Err(GeomError::NotAlternating((i + 1) % n));
            }
        }
        // orientation
        let mut area2 = 0.0;
        for i in 0..n {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            area2 += a.x * b.y - b.x * a.y;
        }
        if area2.abs() < EPS {
            return Err(GeomError::DegenerateArea);
        }
        if area2 < 0.0 {
            pts.reverse();
        }
        // simplicity: non-adjacent edges must not intersect or overlap
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                if seg_axis_intersects(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                    return Err(GeomError::SelfIntersecting(i, j));
                }
            }
        }
        // start at upper-left-most corner: min y, then min x
        let start = (0..n)
            .min_by(|&a, &b| {
                (pts[a].y, pts[a].x)
                    .partial_cmp(&(pts[b].y, pts[b].x))
                    .unwrap()
            })
            .unwrap();
        pts.rotate_left(start);
        Ok(RectPolygon { vertices: pts })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.dist(&b)).sum()
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut a = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            a += p.x * q.y - q.x * p.y;
        }
        a / 2.0
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.vertices.len();
        let a = self.area();
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }

    /// Arc-length parameter of each vertex, starting at 0.
    pub fn corner_params(&self) -> Vec<f64> {
        let per = self.perimeter();
        let mut out = Vec::with_capacity(self.vertices.len());
        let mut acc = 0.0;
        for (a, b) in self.edges() {
            out.push(acc / per);
            acc += a.dist(&b);
        }
        out
    }

    /// Point at normalized arc length u from the start corner.
    pub fn arc_point(&self, u: f64) -> Result<Point2, GeomError> {
        if !(0.0..1.0).contains(&u) {
            return Err(GeomError::ParamOutOfRange(u));
        }
        let per = self.perimeter();
        let mut target = u * per;
        for (a, b) in self.edges() {
            let len = a.dist(&b);
            if target <= len + EPS * per {
                if len < EPS {
                    return Ok(a);
                }
                let t = (target / len).min(1.0);
                return Ok(Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t));
            }
            target -= len;
        }
        Ok(self.vertices[0])
    }

    /// Index of the edge containing parameter u (edge i spans corner i to i+1).
    pub fn edge_of_param(&self, u: f64) -> usize {
        let params = self.corner_params();
        let n = params.len();
        for i in (0..n).rev() {
            if u >= params[i] - EPS {
                return i;
            }
        }
        0
    }

    /// Closest point on the outline: returns (param, distance).
    pub fn project(&self, p: &Point2) -> (f64, f64) {
        let per = self.perimeter();
        let mut best = (0.0, f64::INFINITY);
        let mut acc = 0.0;
        for (a, b) in self.edges() {
            let len = a.dist(&b);
            let d = b.sub(&a);
            let t = if len < EPS {
                0.0
            } else {
                (p.sub(&a).dot(&d) / (len * len)).clamp(0.0, 1.0)
            };
            let q = Point2::new(a.x + d.x * t, a.y + d.y * t);
            let dist = p.dist(&q);
            if dist < best.1 {
                let mut u = (acc + t * len) / per;
                if u >= 1.0 {
                    u = 0.0;
                }
                best = (u, dist);
            }
            acc += len;
        }
        best
    }

    /// Strict interior test (boundary points return false).
    pub fn contains(&self, p: &Point2) -> bool {
        let (_, d) = self.project(p);
        if d < EPS {
            return false;
        }
        self.winding_inside(p)
    }

    /// Interior-or-boundary test with tolerance.
    pub fn contains_or_boundary(&self, p: &Point2, tol: f64) -> bool {
        let (_, d) = self.project(p);
        d <= tol || self.winding_inside(p)
    }

    fn winding_inside(&self, p: &Point2) -> bool {
        // even-odd ray cast along +x
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let t = (p.y - a.y) / (b.y - a.y);
                let x = a.x + t * (b.x - a.x);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Outward normal direction of edge i as a unit axis vector.
    pub fn edge_outward_normal(&self, i: usize) -> Point2 {
        let n = self.vertices.len();
        let a = self.vertices[i];
        let b = self.vertices[(i + 1) % n];
        let d = b.sub(&a);
        // positive-shoelace loops in a y-down frame have the interior on the
        // left of travel, so the outward normal is (dy, -dx)
        let v = Point2::new(d.y, -d.x);
        let len = v.norm();
        Point2::new(v.x / len, v.y / len)
    }

    pub fn translated(&self, d: &Point2) -> RectPolygon {
        RectPolygon {
            vertices: self.vertices.iter().map(|p| p.add(d)).collect(),
        }
    }

    /// Uniform scale about the origin. Re-canonicalizes (orientation is
    /// preserved for positive factors).
    pub fn scaled(&self, f: f64) -> Result<RectPolygon, GeomError> {
        RectPolygon::new(self.vertices.iter().map(|p| p.scale(f)).collect())
    }

    /// Rotation by 90 degrees (about the origin), re-canonicalized.
    pub fn rotated90(&self) -> RectPolygon {
        RectPolygon::new(self.vertices.iter().map(|p| p.rot90()).collect())
            .expect("rotation preserves validity")
    }
}

/// Sampled outline parameters with corner markers.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlineSample {
    pub params: Vec<f64>,
    pub corner_flags: Vec<bool>,
}

/// Sample n points along the outline, including every corner, with the
/// remaining points spread evenly by arc length within each corner gap.
pub fn sample_outline(poly: &RectPolygon, n: usize) -> Result<OutlineSample, GeomError> {
    sample_outline_with(poly, n, &[])
}

/// Like [`sample_outline`] but with extra mandatory parameters included.
pub fn sample_outline_with(
    poly: &RectPolygon,
    n: usize,
    required: &[f64],
) -> Result<OutlineSample, GeomError> {
    let corners = poly.corner_params();
    let mut mandatory: Vec<(f64, bool)> = corners.iter().map(|&u| (u, true)).collect();
    for &u in required {
        if !mandatory.iter().any(|&(v, _)| (v - u).abs() < 1e-12) {
            mandatory.push((u, false));
        }
    }
    mandatory.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let m = mandatory.len();
    if n < m {
        return Err(GeomError::SampleCountTooSmall { need: m, got: n });
    }
    let extra = n - m;
    // gap lengths (cyclic)
    let gaps: Vec<f64> = (0..m)
        .map(|i| {
            let a = mandatory[i].0;
            let b = if i + 1 < m { mandatory[i + 1].0 } else { mandatory[0].0 + 1.0 };
            b - a
        })
        .collect();
    // largest remainder apportionment of extra points to gaps
    let total: f64 = gaps.iter().sum();
    let mut counts = vec![0usize; m];
    let mut rems: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut assigned = 0usize;
    for i in 0..m {
        let exact = extra as f64 * gaps[i] / total;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        rems.push((exact - exact.floor(), i));
    }
    rems.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..(extra - assigned) {
        counts[rems[k].1] += 1;
    }
    let mut params = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..m {
        params.push(mandatory[i].0);
        flags.push(mandatory[i].1);
        let k = counts[i];
        for j in 1..=k {
            let u = mandatory[i].0 + gaps[i] * j as f64 / (k + 1) as f64;
            params.push(u % 1.0);
            flags.push(false);
        }
    }
    Ok(OutlineSample {
        params,
        corner_flags: flags,
    })
}

/// Two-way chamfer distance: mean nearest-neighbor distance in each
/// direction, summed. Unsquared Euclidean distances.
pub fn chamfer(a: &[Point2], b: &[Point2]) -> Result<f64, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptyPointSet);
    }
    let one_way = |from: &[Point2], to: &[Point2]| -> f64 {
        let sum: f64 = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| p.dist(q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        sum / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Uniformly scale to unit area and translate the centroid to the origin.
pub fn normalize_outline(poly: &RectPolygon) -> Result<RectPolygon, GeomError> {
    let area = poly.area();
    if area < EPS {
        return Err(GeomError::DegenerateArea);
    }
    let s = 1.0 / area.sqrt();
    let c = poly.centroid();
    RectPolygon::new(
        poly.vertices()
            .iter()
            .map(|p| Point2::new((p.x - c.x) * s, (p.y - c.y) * s))
            .collect(),
    )
}

/// Maximal rectangle decomposition: grid cells over all vertex coordinates
/// whose centers lie inside the polygon.
pub fn decompose_maximal(poly: &RectPolygon) -> Vec<Rect> {
    let mut xs: Vec<f64> = poly.vertices().iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = poly.vertices().iter().map(|p| p.y).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < EPS);
    ys.dedup_by(|a, b| (*a - *b).abs() < EPS);
    let mut out = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            let w = xs[i + 1] - xs[i];
            let h = ys[j + 1] - ys[j];
            if w < EPS || h < EPS {
                continue;
            }
            let c = Point2::new(xs[i] + w / 2.0, ys[j] + h / 2.0);
            if poly.winding_inside(&c) {
                out.push(Rect::new(xs[i], ys[j], w, h));
            }
        }
    }
    out
}

/// Reassemble the outline of a union of rectangles. The union must form a
/// single simply connected rectilinear region.
pub fn rects_outline(rects: &[Rect]) -> Result<RectPolygon, GeomError> {
    if rects.is_empty() {
        return Err(GeomError::NotSimpleRegion);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in rects {
        xs.push(r.x);
        xs.push(r.x + r.w);
        ys.push(r.y);
        ys.push(r.y + r.h);
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-7);
    ys.dedup_by(|a, b| (*a - *b).abs() < 1e-7);
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let mut marked = vec![false; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let c = Point2::new((xs[i] + xs[i + 1]) / 2.0, (ys[j] + ys[j + 1]) / 2.0);
            if rects.iter().any(|r| {
                c.x > r.x - EPS && c.x < r.x + r.w + EPS && c.y > r.y - EPS && c.y < r.y + r.h + EPS
            }) {
                marked[i * ny + j] = true;
            }
        }
    }
    trace_cells_outline(&xs, &ys, &marked)
}

/// Trace the outer boundary of a set of marked grid cells into a polygon.
/// `marked[i * (ys.len()-1) + j]` covers x in [xs[i], xs[i+1]], y in
/// [ys[j], ys[j+1]].
pub fn trace_cells_outline(
    xs: &[f64],
    ys: &[f64],
    marked: &[bool],
) -> Result<RectPolygon, GeomError> {
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let m = |i: isize, j: isize| -> bool {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            false
        } else {
            marked[i as usize * ny + j as usize]
        }
    };
    // directed boundary edges keyed by start grid vertex (i, j)
    let mut edges: std::collections::HashMap<(usize, usize), Vec<(usize, usize)>> =
        std::collections::HashMap::new();
    let mut n_edges = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            if !marked[i * ny + j] {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            if !m(ii, jj - 1) {
                edges.entry((i, j)).or_default().push((i + 1, j));
                n_edges += 1;
            }
            if !m(ii + 1, jj) {
                edges.entry((i + 1, j)).or_default().push((i + 1, j + 1));
                n_edges += 1;
            }
            if !m(ii, jj + 1) {
                edges.entry((i + 1, j + 1)).or_default().push((i, j + 1));
                n_edges += 1;
            }
            if !m(ii - 1, jj) {
                edges.entry((i, j + 1)).or_default().push((i, j));
                n_edges += 1;
            }
        }
    }
    if edges.values().any(|v| v.len() > 1) {
        // pinch point: two cells meet only at a corner
        return Err(GeomError::NotSimpleRegion);
    }
    let start = *edges.keys().min().ok_or(GeomError::NotSimpleRegion)?;
    let mut loop_pts = Vec::new();
    let mut cur = start;
    loop {
        loop_pts.push(Point2::new(xs[cur.0], ys[cur.1]));
        let next = edges.get(&cur).and_then(|v| v.first()).copied();
        match next {
            Some(nv) => {
                cur = nv;
                if cur == start {
                    break;
                }
            }
            None => return Err(GeomError::NotSimpleRegion),
        }
        if loop_pts.len() > n_edges {
            return Err(GeomError::NotSimpleRegion);
        }
    }
    if loop_pts.len() != n_edges {
        // more than one boundary loop (hole or disconnected region)
        return Err(GeomError::NotSimpleRegion);
    }
    RectPolygon::new(loop_pts)
}

/// Mean value coordinates of p with respect to a closed cage polygon.
pub fn mvc_weights(p: &Point2, cage: &[Point2]) -> Result<Vec<f64>, GeomError> {
    let n = cage.len();
    if n < 3 {
        return Err(GeomError::TooFewVertices(n));
    }
    let cage_poly_inside = {
        // even-odd test against the raw cage loop
        let mut inside = false;
        for i in 0..n {
            let a = cage[i];
            let b = cage[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let t = (p.y - a.y) / (b.y - a.y);
                let x = a.x + t * (b.x - a.x);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    };
    let scale: f64 = cage
        .iter()
        .map(|v| v.dist(p))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let d: Vec<Point2> = cage.iter().map(|v| v.sub(p)).collect();
    let r: Vec<f64> = d.iter().map(|v| v.norm()).collect();
    let mut tans = vec![0.0; n];
    for i in 0..n {
        let j = (i + 1) % n;
        if r[i] < EPS * scale || r[j] < EPS * scale {
            return Err(GeomError::PointNotInsideCage(p.x, p.y));
        }
        let cross = d[i].cross(&d[j]);
        let dot = d[i].dot(&d[j]);
        if cross.abs() < EPS * scale * scale && dot < 0.0 {
            // p lies on the segment between cage vertices i and j
            return Err(GeomError::PointNotInsideCage(p.x, p.y));
        }
        tans[i] = if cross.abs() < EPS * scale * scale {
            0.0
        } else {
            (r[i] * r[j] - dot) / cross
        };
    }
    if !cage_poly_inside {
        return Err(GeomError::PointNotInsideCage(p.x, p.y));
    }
    let mut w = vec![0.0; n];
    let mut sum = 0.0;
    for i in 0..n {
        let prev = (i + n - 1) % n;
        w[i] = (tans[prev] + tans[i]) / r[i];
        sum += w[i];
    }
    for wi in w.iter_mut() {
        *wi /= sum;
    }
    Ok(w)
}

/// Map p through MVC from a source cage to a target cage.
pub fn mvc_map(p: &Point2, cage_src: &[Point2], cage_tgt: &[Point2]) -> Result<Point2, GeomError> {
    if cage_src.len() != cage_tgt.len() {
        return Err(GeomError::CageMismatch(cage_src.len(), cage_tgt.len()));
    }
    let w = mvc_weights(p, cage_src)?;
    let mut out = Point2::new(0.0, 0.0);
    for (wi, v) in w.iter().zip(cage_tgt) {
        out.x += wi * v.x;
        out.y += wi * v.y;
    }
    Ok(out)
}

/// Map a point lying on the source cage boundary by linear interpolation
/// along its containing edge. Returns None if p is not on the boundary
/// within tol.
pub fn map_on_cage_boundary(
    p: &Point2,
    cage_src: &[Point2],
    cage_tgt: &[Point2],
    tol: f64,
) -> Option<Point2> {
    let n = cage_src.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..n {
        let a = cage_src[i];
        let b = cage_src[(i + 1) % n];
        let d = b.sub(&a);
        let len2 = d.dot(&d);
        let t = if len2 < EPS {
            0.0
        } else {
            (p.sub(&a).dot(&d) / len2).clamp(0.0, 1.0)
        };
        let q = Point2::new(a.x + d.x * t, a.y + d.y * t);
        let dist = p.dist(&q);
        if best.map_or(true, |(bd, _, _)| dist < bd) {
            best = Some((dist, i, t));
        }
    }
    let (dist, i, t) = best?;
    if dist > tol {
        return None;
    }
    let a = cage_tgt[i];
    let b = cage_tgt[(i + 1) % cage_tgt.len()];
    Some(Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn unit_square() -> RectPolygon {
        RectPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap()
    }

    pub fn l_shape() -> RectPolygon {
        RectPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
        ])
        .unwrap()
    }

    #[test]
    fn arc_point_square_corners() {
        let sq = unit_square();
        let p0 = sq.arc_point(0.0).unwrap();
        assert_eq!((p0.x, p0.y), (0.0, 0.0));
        let p1 = sq.arc_point(0.25).unwrap();
        // next corner along the loop, a quarter perimeter away
        assert!(p1.dist(&Point2::new(1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn arc_point_l_shape_midway() {
        // perimeter 8; u = 0.5 is arc length 4:
        // (0,0)->(2,0) [0,2], ->(2,1) [2,3], ->(1,1) [3,4]
        let l = l_shape();
        assert!((l.perimeter() - 8.0).abs() < 1e-12);
        let p = l.arc_point(0.5).unwrap();
        assert!(p.dist(&Point2::new(1.0, 1.0)) < 1e-12);
    }

    #[test]
    fn arc_point_rejects_out_of_range() {
        let sq = unit_square();
        assert!(sq.arc_point(1.0).is_err());
        assert!(sq.arc_point(-0.1).is_err());
    }

    #[test]
    fn sample_square_corners_only() {
        let sq = unit_square();
        let s = sample_outline(&sq, 4).unwrap();
        assert_eq!(s.params, vec![0.0, 0.25, 0.5, 0.75]);
        assert!(s.corner_flags.iter().all(|&f| f));
    }

    #[test]
    fn sample_square_with_midpoints() {
        let sq = unit_square();
        let s = sample_outline(&sq, 8).unwrap();
        let expected = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];
        for (a, b) in s.params.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            s.corner_flags,
            vec![true, false, true, false, true, false, true, false]
        );
    }

    #[test]
    fn sample_l_shape_250() {
        let l = l_shape();
        let s = sample_outline(&l, 250).unwrap();
        assert_eq!(s.params.len(), 250);
        assert_eq!(s.corner_flags.iter().filter(|&&f| f).count(), 6);
        for w in s.params.windows(2) {
            assert!(w[0] < w[1]);
        }
        for u in l.corner_params() {
            assert!(s.params.iter().any(|&p| (p - u).abs() < 1e-12));
        }
    }

    #[test]
    fn sample_rejects_too_few() {
        let l = l_shape();
        assert!(sample_outline(&l, 5).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![Point2::new(0.0, 0.0)];
        let b = vec![Point2::new(3.0, 4.0)];
        assert!((chamfer(&a, &a).unwrap() - 0.0).abs() < 1e-12);
        assert!((chamfer(&a, &b).unwrap() - 10.0).abs() < 1e-12);
        let a2 = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let b2 = vec![Point2::new(0.0, 1.0)];
        let expected = (1.0 + 2.0_f64.sqrt()) / 2.0 + 1.0;
        assert!((chamfer(&a2, &b2).unwrap() - expected).abs() < 1e-12);
        assert!(chamfer(&a2, &[]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let sq = RectPolygon::new(vec![
            Point2::new(-0.5, -0.5),
            Point2::new(0.5, -0.5),
            Point2::new(0.5, 0.5),
            Point2::new(-0.5, 0.5),
        ])
        .unwrap();
        let n = normalize_outline(&sq).unwrap();
        assert_eq!(n, sq);

        let big = RectPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 2.0),
        ])
        .unwrap();
        let nb = normalize_outline(&big).unwrap();
        assert!((nb.area() - 1.0).abs() < 1e-12);
        assert!(nb.centroid().norm() < 1e-12);

        let l = l_shape();
        let nl = normalize_outline(&l).unwrap();
        assert!((nl.area() - 1.0).abs() < 1e-12);
        assert!(nl.centroid().norm() < 1e-12);
        assert_eq!(nl.vertices().len(), 6);
    }

    #[test]
    fn decompose_examples() {
        let sq = unit_square();
        let d = decompose_maximal(&sq);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0], Rect::new(0.0, 0.0, 1.0, 1.0));

        let l = l_shape();
        let dl = decompose_maximal(&l);
        assert_eq!(dl.len(), 3);
        let total: f64 = dl.iter().map(|r| r.area()).sum();
        assert!((total - l.area()).abs() < 1e-9);

        // plus/cross shape -> 5 cells
        let plus = RectPolygon::new(vec![
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(3.0, 1.0),
            Point2::new(3.0, 2.0),
            Point2::new(2.0, 2.0),
            Point2::new(2.0, 3.0),
            Point2::new(1.0, 3.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
        ])
        .unwrap();
        assert_eq!(decompose_maximal(&plus).len(), 5);
    }

    #[test]
    fn decompose_rects_disjoint() {
        let l = l_shape();
        let dl = decompose_maximal(&l);
        for i in 0..dl.len() {
            for j in (i + 1)..dl.len() {
                assert!(dl[i].intersection_area(&dl[j]) < 1e-12);
            }
        }
    }

    #[test]
    fn rects_outline_roundtrip() {
        let l = l_shape();
        let d = decompose_maximal(&l);
        let back = rects_outline(&d).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn mvc_square_center() {
        let sq = unit_square();
        let w = mvc_weights(&Point2::new(0.5, 0.5), sq.vertices()).unwrap();
        for wi in &w {
            assert!((wi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn mvc_near_vertex_limit() {
        let sq = unit_square();
        let p = Point2::new(1e-6, 1e-6);
        let w = mvc_weights(&p, sq.vertices()).unwrap();
        assert!(w[0] > 0.999);
    }

    #[test]
    fn mvc_rejects_boundary() {
        let sq = unit_square();
        assert!(mvc_weights(&Point2::new(0.5, 0.0), sq.vertices()).is_err());
        assert!(mvc_weights(&Point2::new(2.0, 0.5), sq.vertices()).is_err());
        assert!(mvc_weights(&Point2::new(0.0, 0.0), sq.vertices()).is_err());
    }

    #[test]
    fn mvc_map_identity_translation_scale() {
        let sq = unit_square();
        let p = Point2::new(0.3, 0.7);
        let same = mvc_map(&p, sq.vertices(), sq.vertices()).unwrap();
        assert!(same.dist(&p) < 1e-12);
        let t = Point2::new(5.0, -2.0);
        let tgt: Vec<Point2> = sq.vertices().iter().map(|v| v.add(&t)).collect();
        let moved = mvc_map(&p, sq.vertices(), &tgt).unwrap();
        assert!(moved.dist(&p.add(&t)) < 1e-12);
        let tgt2: Vec<Point2> = sq.vertices().iter().map(|v| v.scale(2.0)).collect();
        let scaled = mvc_map(&p, sq.vertices(), &tgt2).unwrap();
        assert!(scaled.dist(&p.scale(2.0)) < 1e-12);
    }

    #[test]
    fn chamfer_self_and_symmetry() {
        let pts: Vec<Point2> = (0..20)
            .map(|i| Point2::new((i as f64 * 0.37).sin(), (i as f64 * 0.71).cos()))
            .collect();
        let other: Vec<Point2> = (0..13)
            .map(|i| Point2::new((i as f64 * 0.13).cos(), (i as f64 * 0.29).sin()))
            .collect();
        assert!(chamfer(&pts, &pts).unwrap() < 1e-12);
        let ab = chamfer(&pts, &other).unwrap();
        let ba = chamfer(&other, &pts).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }
}
