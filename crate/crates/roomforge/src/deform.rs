//! Fit a room's 3D geometry to a target outline: outline correspondence,
//! MVC cage deformation of the shell, portal snapping, and rigid-object
//! reinsertion.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::geom::{
    map_on_cage_boundary, mvc_map, sample_outline_with, GeomError, Point2, RectPolygon,
    METERS_PER_UNIT,
};
use crate::model::Room;
use crate::qp::{solve_qp, QpError, QpProblem, QpRow, QpStatus};

/// Face categories that stay with the deformable shell; everything else is
/// a rigid object.
pub const SHELL_LABELS: [&str; 4] = ["floor", "ceiling", "wall", "curtain"];

#[derive(Debug, Error)]
pub enum DeformError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed obj at line {line}: {reason}")]
    MalformedObj { line: usize, reason: String },
    #[error("obj line {0}: face outside any group")]
    UngroupedFace(usize),
    #[error("portal count mismatch: {0} source vs {1} target")]
    PortalCountMismatch(usize, usize),
    #[error("portal {0}: target interval does not fit inside one wall")]
    PortalContainmentInfeasible(usize),
    #[error("portal {0}: snapped target lies outside its wall")]
    PortalOutsideWall(usize),
    #[error("mesh vertex {0} lies outside the source cage")]
    VertexOutsideCage(usize),
    #[error("no feasible outline correspondence")]
    NoFeasibleCorrespondence,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("object '{0}' cannot be placed without collisions at 50% scale")]
    PlacementFailure(String),
}

// ---------------------------------------------------------------------------
// Meshes

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dist(&self, o: &Point3) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }

    pub fn horizontal(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub v: [usize; 3],
    /// Index into the mesh's group table.
    pub group: usize,
}

/// Triangle mesh with per-face labels. Horizontal coordinates are (x, y);
/// z is vertical. Group names follow `label.instanceId` (e.g. `bed.3`).
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<Face>,
    pub groups: Vec<String>,
}

fn triangle_area3(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let u = (b.x - a.x, b.y - a.y, b.z - a.z);
    let v = (c.x - a.x, c.y - a.y, c.z - a.z);
    let cx = u.1 * v.2 - u.2 * v.1;
    let cy = u.2 * v.0 - u.0 * v.2;
    let cz = u.0 * v.1 - u.1 * v.0;
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

fn fmt_f(v: f64) -> String {
    if v == 0.0 {
        // normalize -0
        "0".to_string()
    } else {
        format!("{v}")
    }
}

impl IndexedMesh {
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].v;
        triangle_area3(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn from_obj(text: &str) -> Result<IndexedMesh, DeformError> {
        let mut vertices = Vec::new();
        let mut faces: Vec<Face> = Vec::new();
        let mut groups: Vec<String> = Vec::new();
        let mut group_idx: BTreeMap<String, usize> = BTreeMap::new();
        let mut current: Option<usize> = None;
        for (lno, raw) in text.lines().enumerate() {
            let line = lno + 1;
            let mut it = raw.split_whitespace();
            let Some(tag) = it.next() else { continue };
            match tag {
                "v" => {
                    let mut coord = |name: &str| -> Result<f64, DeformError> {
                        it.next()
                            .ok_or_else(|| DeformError::MalformedObj {
                                line,
                                reason: format!("missing {name}"),
                            })?
                            .parse::<f64>()
                            .map_err(|e| DeformError::MalformedObj {
                                line,
                                reason: format!("{name}: {e}"),
                            })
                    };
                    let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
                    vertices.push(Point3::new(x, y, z));
                }
                "g" => {
                    let name = it.next().ok_or_else(|| DeformError::MalformedObj {
                        line,
                        reason: "missing group name".into(),
                    })?;
                    let idx = *group_idx.entry(name.to_string()).or_insert_with(|| {
                        groups.push(name.to_string());
                        groups.len() - 1
                    });
                    current = Some(idx);
                }
                "f" => {
                    let g = current.ok_or(DeformError::UngroupedFace(line))?;
                    let idx: Vec<usize> = it
                        .map(|tok| {
                            let first = tok.split('/').next().unwrap_or("");
                            let i: i64 = first.parse().map_err(|e| DeformError::MalformedObj {
                                line,
                                reason: format!("face index: {e}"),
                            })?;
                            if i < 1 || i as usize > vertices.len() {
                                return Err(DeformError::MalformedObj {
                                    line,
                                    reason: format!("face index {i} out of range"),
                                });
                            }
                            Ok(i as usize - 1)
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(DeformError::MalformedObj {
                            line,
                            reason: "face with fewer than 3 vertices".into(),
                        });
                    }
                    for k in 1..idx.len() - 1 {
                        let v = [idx[0], idx[k], idx[k + 1]];
                        // drop degenerate faces on load
                        if triangle_area3(&vertices[v[0]], &vertices[v[1]], &vertices[v[2]])
                            > 1e-12
                        {
                            faces.push(Face { v, group: g });
                        }
                    }
                }
                _ => {} // vt/vn/usemtl/comments ignored
            }
        }
        Ok(IndexedMesh { vertices, faces, groups })
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", fmt_f(v.x), fmt_f(v.y), fmt_f(v.z)));
        }
        let mut last_group = usize::MAX;
        for f in &self.faces {
            if f.group != last_group {
                out.push_str(&format!("g {}\n", self.groups[f.group]));
                last_group = f.group;
            }
            out.push_str(&format!("f {} {} {}\n", f.v[0] + 1, f.v[1] + 1, f.v[2] + 1));
        }
        out
    }

    pub fn load(path: &Path) -> Result<IndexedMesh, DeformError> {
        IndexedMesh::from_obj(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DeformError> {
        std::fs::write(path, self.to_obj())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Outline correspondence

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CorrespondenceWeights {
    pub lambda_e: f64,
    pub lambda_n: f64,
    pub n_samples: usize,
}

impl Default for CorrespondenceWeights {
    fn default() -> Self {
        CorrespondenceWeights { lambda_e: 1.0, lambda_n: 1.0, n_samples: 250 }
    }
}

/// One paired portal: source interval and final target interval, both in
/// unit-perimeter parameters of their own outline.
#[derive(Debug, Clone, Copy)]
pub struct PortalPair {
    pub src: (f64, f64),
    pub tgt: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct PortalAnchor {
    pub pair: PortalPair,
    /// Source portal endpoints located between samples: (sample index i,
    /// fraction toward sample i+1).
    pub a: (usize, f64),
    pub b: (usize, f64),
    /// Target corner interval (params) that must contain both endpoint
    /// images.
    pub bounds: (f64, f64),
    /// Target wall (edge index) hosting the portal.
    pub wall: usize,
}

#[derive(Debug, Clone)]
pub struct OutlineCorrespondence {
    pub src: RectPolygon,
    pub tgt: RectPolygon,
    pub u_s: Vec<f64>,
    pub u_t: Vec<f64>,
    pub sigma_s: Vec<bool>,
    pub sigma_t: Vec<bool>,
    /// Per segment i (sample i to i+1): true if the source segment is
    /// vertical.
    pub theta: Vec<bool>,
    pub portals: Vec<PortalAnchor>,
    pub objective: f64,
}

impl OutlineCorrespondence {
    pub fn src_points(&self) -> Result<Vec<Point2>, GeomError> {
        self.u_s.iter().map(|&u| self.src.arc_point(u.rem_euclid(1.0))).collect()
    }

    pub fn tgt_points(&self) -> Result<Vec<Point2>, GeomError> {
        self.u_t.iter().map(|&u| self.tgt.arc_point(u.rem_euclid(1.0))).collect()
    }

    /// Target-parameter image of an interpolated source anchor.
    pub fn image_param(&self, anchor: (usize, f64)) -> f64 {
        let (i, lambda) = anchor;
        let n = self.u_t.len();
        let a = self.u_t[i];
        let gap = (self.u_t[(i + 1) % n] - a).rem_euclid(1.0);
        (a + lambda * gap).rem_euclid(1.0)
    }
}

/// Exact objective of a candidate target parametrization: per-segment
/// elasticity + normal costs minus the corner-match reward.
pub fn correspondence_objective(
    tgt: &RectPolygon,
    u_t: &[f64],
    theta: &[bool],
    sigma_s: &[bool],
    w: &CorrespondenceWeights,
) -> Result<f64, GeomError> {
    let n = u_t.len();
    let nf = n as f64;
    let per = tgt.perimeter();
    let tc = tgt.corner_params();
    let mut total = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        let d = (u_t[j] - u_t[i]).rem_euclid(1.0) * per;
        total += w.lambda_e / nf * (d - per / nf).powi(2);
        let pi = tgt.arc_point(u_t[i].rem_euclid(1.0))?;
        let pj = tgt.arc_point(u_t[j].rem_euclid(1.0))?;
        total += w.lambda_n / nf
            * if theta[i] { (pj.x - pi.x).powi(2) } else { (pj.y - pi.y).powi(2) };
        if sigma_s[i]
            && tc.iter().any(|&c| {
                let d = (u_t[i] - c).rem_euclid(1.0);
                d < 1e-9 || d > 1.0 - 1e-9
            })
        {
            total -= 1.0;
        }
    }
    Ok(total)
}

/// Per-gap context shared by the dynamic program.
struct GapCtx<'a> {
    tgt: &'a RectPolygon,
    per: f64,
    u_s: &'a [f64],
    theta: &'a [bool],
    /// Portal endpoint constraints: (sample i, fraction toward i+1, lo,
    /// hi) — the interpolated image must land in [lo, hi] (params).
    portal_cons: Vec<(usize, f64, f64, f64)>,
    lambda_e: f64,
    lambda_n: f64,
    n: usize,
}

impl GapCtx<'_> {
    fn pos(&self, w_abs: f64) -> Point2 {
        self.tgt
            .arc_point((w_abs / self.per).rem_euclid(1.0))
            .expect("param in range after rem_euclid")
    }

    fn seg_cost(&self, seg: usize, w0: f64, w1: f64) -> f64 {
        let nf = self.n as f64;
        let e = self.lambda_e / nf * ((w1 - w0) - self.per / nf).powi(2);
        let p0 = self.pos(w0);
        let p1 = self.pos(w1);
        let nc = self.lambda_n / nf
            * if self.theta[seg % self.n] {
                (p1.x - p0.x).powi(2)
            } else {
                (p1.y - p0.y).powi(2)
            };
        e + nc
    }

    /// Linear model x(w), y(w) of the target point for an absolute arc
    /// coordinate lying on a known edge: returns ((sx, cx), (sy, cy)) with
    /// x = sx*w + cx.
    fn edge_model(&self, w_abs: f64) -> ((f64, f64), (f64, f64)) {
        let u = (w_abs / self.per).rem_euclid(1.0);
        let e = self.tgt.edge_of_param(u);
        let verts = self.tgt.vertices();
        let a = verts[e];
        let b = verts[(e + 1) % verts.len()];
        let len = a.dist(&b);
        let start_abs = w_abs - (u - self.tgt.corner_params()[e]) * self.per;
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        ((ux, a.x - ux * start_abs), (uy, a.y - uy * start_abs))
    }

    /// Optimal placement of interior samples a+1..b-1 between fixed
    /// anchors (absolute arc coordinates). Returns (exact cost, interior
    /// values) or None when portal bounds make the gap infeasible.
    fn solve(&self, a: usize, b: usize, sa: f64, sb: f64) -> Option<(f64, Vec<f64>)> {
        let k = b - a - 1;
        if sb <= sa + 1e-12 && k > 0 {
            return None;
        }
        // portal endpoint constraints touching this gap, rewritten over the
        // gap's variables: terms·v + c0 must land in [lo, hi] (abs arc)
        struct Cons {
            terms: Vec<(usize, f64)>,
            c0: f64,
            lo: f64,
            hi: f64,
        }
        let mut cons: Vec<Cons> = Vec::new();
        for &(i, lambda, lo, hi) in &self.portal_cons {
            if i < a || i + 1 > b {
                continue;
            }
            let mut found = None;
            for m in 0..3 {
                let lo_a = (lo + m as f64) * self.per;
                let hi_a = (hi + m as f64) * self.per;
                if hi_a >= sa - 1e-9 && lo_a <= sb + 1e-9 {
                    found = Some((lo_a, hi_a));
                    break;
                }
            }
            let Some((lo_a, hi_a)) = found else { return None };
            let mut terms = Vec::new();
            let mut c0 = 0.0;
            for (idx, coef) in [(i, 1.0 - lambda), (i + 1, lambda)] {
                if idx == a {
                    c0 += coef * sa;
                } else if idx == b {
                    c0 += coef * sb;
                } else {
                    terms.push((idx - a - 1, coef));
                }
            }
            if terms.is_empty() {
                if c0 < lo_a - 1e-9 || c0 > hi_a + 1e-9 {
                    return None;
                }
                continue;
            }
            cons.push(Cons { terms, c0, lo: lo_a, hi: hi_a });
        }
        if k == 0 {
            return Some((self.seg_cost(a, sa, sb), Vec::new()));
        }
        // initial guess: proportional to source arc length
        let src_a = self.u_s[a];
        let span_src = {
            let mut end = if b == self.n { self.u_s[0] + 1.0 } else { self.u_s[b] };
            if end <= src_a {
                end += 1.0;
            }
            end - src_a
        };
        let mut v: Vec<f64> = (0..k)
            .map(|i| {
                let mut us = self.u_s[a + 1 + i];
                if us < src_a {
                    us += 1.0;
                }
                sa + (sb - sa) * (us - src_a) / span_src
            })
            .collect();
        let nf = self.n as f64;
        let mut edges_prev: Vec<(f64, f64, f64, f64)> = Vec::new();
        for _iter in 0..8 {
            // fix each variable's edge; positions become linear in v
            let models: Vec<((f64, f64), (f64, f64))> =
                v.iter().map(|&w| self.edge_model(w)).collect();
            let edges_now: Vec<(f64, f64, f64, f64)> = models
                .iter()
                .map(|((sx, cx), (sy, cy))| (*sx, *cx, *sy, *cy))
                .collect();
            // quadratic cost: accumulate H v v/2-form and gradient
            let mut h = vec![vec![0.0; k]; k];
            let mut g = vec![0.0; k];
            // term weight*(sum c_j v_j + c0)^2
            let add_sq = |terms: &[(usize, f64)], c0: f64, weight: f64,
                              h: &mut Vec<Vec<f64>>, g: &mut Vec<f64>| {
                for &(i, ci) in terms {
                    for &(j, cj) in terms {
                        h[i][j] += 2.0 * weight * ci * cj;
                    }
                    g[i] += 2.0 * weight * ci * c0;
                }
            };
            // segments j = 0..=k between w_j and w_{j+1}
            let coord = |idx: usize| -> Option<usize> {
                if idx == 0 || idx == k + 1 { None } else { Some(idx - 1) }
            };
            let anchor_val = |idx: usize| if idx == 0 { sa } else { sb };
            for j in 0..=k {
                let seg = a + j;
                // elasticity: w_{j+1} - w_j - per/n
                let mut terms = Vec::new();
                let mut c0 = -self.per / nf;
                match coord(j + 1) {
                    Some(vj) => terms.push((vj, 1.0)),
                    None => c0 += anchor_val(j + 1),
                }
                match coord(j) {
                    Some(vj) => terms.push((vj, -1.0)),
                    None => c0 -= anchor_val(j),
                }
                add_sq(&terms, c0, self.lambda_e / nf, &mut h, &mut g);
                // normal: coordinate difference with edge-fixed linear model
                let model_of = |idx: usize| -> (f64, f64) {
                    let vertical = self.theta[seg % self.n];
                    match coord(idx) {
                        Some(vj) => {
                            let ((sx, cx), (sy, cy)) = models[vj];
                            if vertical { (sx, cx) } else { (sy, cy) }
                        }
                        None => {
                            let p = self.pos(anchor_val(idx));
                            (0.0, if vertical { p.x } else { p.y })
                        }
                    }
                };
                let (s1, c1) = model_of(j + 1);
                let (s0, c0n) = model_of(j);
                let mut terms = Vec::new();
                if let Some(vj) = coord(j + 1) {
                    terms.push((vj, s1));
                }
                if let Some(vj) = coord(j) {
                    terms.push((vj, -s0));
                }
                add_sq(&terms, c1 - c0n, self.lambda_n / nf, &mut h, &mut g);
            }
            // fast path: unconstrained minimizer H v = -g
            let sol = solve_dense(&h, &g);
            let feasible = |x: &[f64]| -> bool {
                let mut prev = sa;
                for &xi in x.iter() {
                    if xi < prev - 1e-9 {
                        return false;
                    }
                    prev = xi;
                }
                if prev > sb + 1e-9 {
                    return false;
                }
                cons.iter().all(|c| {
                    let val = c.c0
                        + c.terms.iter().map(|&(i, ci)| ci * x[i]).sum::<f64>();
                    val >= c.lo - 1e-9 && val <= c.hi + 1e-9
                })
            };
            let next = match sol {
                Some(x) if feasible(&x) => x,
                _ => {
                    // constrained convex QP
                    let mut qp = QpProblem::new(k);
                    for i in 0..k {
                        for j in 0..k {
                            if h[i][j] != 0.0 {
                                qp.p_triplets.push((i, j, h[i][j]));
                            }
                        }
                        qp.q[i] = g[i];
                    }
                    qp.ineq.push(QpRow { terms: vec![(0, -1.0)], rhs: -sa });
                    for i in 0..k - 1 {
                        qp.ineq.push(QpRow {
                            terms: vec![(i, 1.0), (i + 1, -1.0)],
                            rhs: 0.0,
                        });
                    }
                    qp.ineq.push(QpRow { terms: vec![(k - 1, 1.0)], rhs: sb });
                    for c in &cons {
                        let neg: Vec<(usize, f64)> =
                            c.terms.iter().map(|&(i, ci)| (i, -ci)).collect();
                        qp.ineq.push(QpRow { terms: neg, rhs: c.c0 - c.lo });
                        qp.ineq.push(QpRow {
                            terms: c.terms.clone(),
                            rhs: c.hi - c.c0,
                        });
                    }
                    match solve_qp(&qp) {
                        Ok(s) if s.status == QpStatus::Optimal => s.x,
                        _ => return None,
                    }
                }
            };
            v = next;
            // keep monotone
            let mut prev = sa;
            for vi in v.iter_mut() {
                if *vi < prev {
                    *vi = prev;
                }
                prev = *vi;
            }
            if edges_now == edges_prev {
                break;
            }
            edges_prev = edges_now;
        }
        // exact cost with the final values
        let mut cost = 0.0;
        let mut prev = sa;
        for (j, &vi) in v.iter().enumerate() {
            cost += self.seg_cost(a + j, prev, vi);
            prev = vi;
        }
        cost += self.seg_cost(a + k, prev, sb);
        Some((cost, v))
    }
}

/// Solve H x = -g for symmetric positive definite H (dense, partial
/// pivoting). Returns None on singular systems.
fn solve_dense(h: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let mut a: Vec<Vec<f64>> = h.to_vec();
    let mut b: Vec<f64> = g.iter().map(|v| -v).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Two-phase correspondence solve: dynamic program over cyclic corner
/// assignments (source corner 0 pinned to some target corner), each gap
/// scored by its own convex subproblem; then the winning assignment's gap
/// solutions give the interior points.
pub fn correspond(
    src: &RectPolygon,
    tgt: &RectPolygon,
    pairs: &[PortalPair],
    w: &CorrespondenceWeights,
) -> Result<OutlineCorrespondence, DeformError> {
    let tc = tgt.corner_params();
    let nt = tc.len();
    if w.n_samples < nt {
        return Err(DeformError::TooFewSamples { need: nt, got: w.n_samples });
    }
    let sample = sample_outline_with(src, w.n_samples, &[])?;
    let u_s = sample.params;
    let sigma_s = sample.corner_flags;
    let n = u_s.len();

    // segment orientation flags
    let sv = src.vertices();
    let theta: Vec<bool> = (0..n)
        .map(|i| {
            let gap = (u_s[(i + 1) % n] - u_s[i]).rem_euclid(1.0);
            let mid = (u_s[i] + gap / 2.0).rem_euclid(1.0);
            let e = src.edge_of_param(mid);
            (sv[e].x - sv[(e + 1) % sv.len()].x).abs() < 1e-9
        })
        .collect();

    // portal anchors: locate each source endpoint between its bracketing
    // samples and record the target corner interval it must map into
    let locate = |mu: f64| -> (usize, f64) {
        let mu = mu.rem_euclid(1.0);
        let i = match u_s.partition_point(|&v| v <= mu + 1e-12) {
            0 => n - 1,
            k => k - 1,
        };
        let gap = (u_s[(i + 1) % n] - u_s[i]).rem_euclid(1.0);
        let lambda = if gap <= 1e-15 {
            0.0
        } else {
            ((mu - u_s[i]).rem_euclid(1.0) / gap).clamp(0.0, 1.0)
        };
        (i, lambda)
    };
    let mut anchors = Vec::with_capacity(pairs.len());
    let mut portal_cons = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        let (mut ta, mut tb) = p.tgt;
        ta = ta.rem_euclid(1.0);
        tb = tb.rem_euclid(1.0);
        if tb <= ta {
            return Err(DeformError::PortalContainmentInfeasible(pi));
        }
        let wall = tgt.edge_of_param((ta + tb) / 2.0);
        let lo = tc[wall];
        let hi = if wall + 1 < nt { tc[wall + 1] } else { 1.0 };
        if ta < lo - 1e-9 || tb > hi + 1e-9 {
            return Err(DeformError::PortalContainmentInfeasible(pi));
        }
        let a = locate(p.src.0);
        let b = locate(p.src.1);
        portal_cons.push((a.0, a.1, lo, hi));
        portal_cons.push((b.0, b.1, lo, hi));
        anchors.push(PortalAnchor { pair: *p, a, b, bounds: (lo, hi), wall });
    }

    let per = tgt.perimeter();
    let ctx = GapCtx {
        tgt,
        per,
        u_s: &u_s,
        theta: &theta,
        portal_cons,
        lambda_e: w.lambda_e,
        lambda_n: w.lambda_n,
        n,
    };

    // corner samples on the source
    let cs: Vec<usize> = (0..n).filter(|&i| sigma_s[i]).collect();
    let ns = cs.len();
    debug_assert_eq!(cs[0], 0);

    // memoized gap costs keyed on (a, b, bits of anchors)
    let mut memo: BTreeMap<(usize, usize, u64, u64), Option<(f64, Vec<f64>)>> = BTreeMap::new();
    let mut gap = |a: usize, b: usize, sa: f64, sb: f64| -> Option<(f64, Vec<f64>)> {
        memo.entry((a, b, sa.to_bits(), sb.to_bits()))
            .or_insert_with(|| ctx.solve(a, b, sa, sb))
            .clone()
    };

    let mut best: Option<(f64, Vec<f64>)> = None; // (dp objective, abs arc values)
    for t0 in 0..nt {
        let s_of = |j: usize| -> f64 {
            if t0 + j < nt { tc[t0 + j] * per } else { (tc[t0 + j - nt] + 1.0) * per }
        };
        let mut dp = vec![vec![f64::INFINITY; nt]; ns];
        let mut par = vec![vec![(usize::MAX, usize::MAX); nt]; ns];
        dp[0][0] = -1.0;
        for a in 0..ns {
            for j in 0..nt {
                if !dp[a][j].is_finite() {
                    continue;
                }
                for b in a + 1..ns {
                    for l in j + 1..nt {
                        if let Some((c, _)) = gap(cs[a], cs[b], s_of(j), s_of(l)) {
                            let nd = dp[a][j] + c - 1.0;
                            if nd < dp[b][l] - 1e-12 {
                                dp[b][l] = nd;
                                par[b][l] = (a, j);
                            }
                        }
                    }
                }
            }
        }
        for a in 0..ns {
            for j in 0..nt {
                if !dp[a][j].is_finite() {
                    continue;
                }
                let Some((c, _)) = gap(cs[a], n, s_of(j), s_of(0) + per) else {
                    continue;
                };
                let total = dp[a][j] + c;
                if best.as_ref().map(|(bv, _)| total < bv - 1e-12).unwrap_or(true) {
                    // reconstruct anchors along the parent chain
                    let mut chain = vec![(a, j)];
                    let (mut ca, mut cj) = (a, j);
                    while (ca, cj) != (0, 0) {
                        let (pa, pj) = par[ca][cj];
                        chain.push((pa, pj));
                        (ca, cj) = (pa, pj);
                    }
                    chain.reverse();
                    let mut vals = vec![f64::NAN; n];
                    for &(ai, ji) in &chain {
                        vals[cs[ai]] = s_of(ji);
                    }
                    for win in chain.windows(2) {
                        let (a0, j0) = win[0];
                        let (a1, j1) = win[1];
                        let (_, interior) = gap(cs[a0], cs[a1], s_of(j0), s_of(j1))
                            .expect("memoized feasible gap");
                        for (off, v) in interior.into_iter().enumerate() {
                            vals[cs[a0] + 1 + off] = v;
                        }
                    }
                    let (last_a, last_j) = *chain.last().expect("non-empty chain");
                    let (_, interior) = gap(cs[last_a], n, s_of(last_j), s_of(0) + per)
                        .expect("memoized feasible gap");
                    for (off, v) in interior.into_iter().enumerate() {
                        vals[cs[last_a] + 1 + off] = v;
                    }
                    best = Some((total, vals));
                }
            }
        }
    }
    let (_, mut vals) = best.ok_or(DeformError::NoFeasibleCorrespondence)?;

    // strictly increasing absolute values, then back to parameters
    for i in 1..n {
        if vals[i] <= vals[i - 1] {
            vals[i] = vals[i - 1] + 1e-12 * per;
        }
    }
    let u_t: Vec<f64> = vals.iter().map(|&v| (v / per).rem_euclid(1.0)).collect();
    let sigma_t: Vec<bool> = u_t
        .iter()
        .map(|&u| {
            tc.iter().any(|&c| {
                let d = (u - c).rem_euclid(1.0);
                d < 1e-9 || d > 1.0 - 1e-9
            })
        })
        .collect();
    let objective = correspondence_objective(tgt, &u_t, &theta, &sigma_s, w)?;
    Ok(OutlineCorrespondence {
        src: src.clone(),
        tgt: tgt.clone(),
        u_s,
        u_t,
        sigma_s,
        sigma_t,
        theta,
        portals: anchors,
        objective,
    })
}

// ---------------------------------------------------------------------------
// Shell deformation and portal snapping

fn map_horizontal(
    p: &Point2,
    cage_src: &[Point2],
    cage_tgt: &[Point2],
) -> Option<Point2> {
    if let Some(q) = map_on_cage_boundary(p, cage_src, cage_tgt, 1e-9) {
        return Some(q);
    }
    match mvc_map(p, cage_src, cage_tgt) {
        Ok(q) => Some(q),
        Err(_) => map_on_cage_boundary(p, cage_src, cage_tgt, 1e-6),
    }
}

/// Map every vertex's horizontal coordinates through the correspondence
/// cage; z is untouched.
pub fn deform_shell(
    mesh: &IndexedMesh,
    corr: &OutlineCorrespondence,
) -> Result<IndexedMesh, DeformError> {
    let cs = corr.src_points()?;
    let ct = corr.tgt_points()?;
    let mut out = mesh.clone();
    for (i, v) in out.vertices.iter_mut().enumerate() {
        let q = map_horizontal(&v.horizontal(), &cs, &ct)
            .ok_or(DeformError::VertexOutsideCage(i))?;
        v.x = q.x;
        v.y = q.y;
    }
    Ok(out)
}

/// Per-portal wall warp: a piecewise-linear 1D stretch along the hosting
/// wall moving the deformed portal interval exactly onto its target.
pub fn snap_portals(
    mesh: &IndexedMesh,
    corr: &OutlineCorrespondence,
) -> Result<IndexedMesh, DeformError> {
    let verts = corr.tgt.vertices();
    let nv = verts.len();
    // knots per wall: (current coordinate, target coordinate)
    let mut walls: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (pi, anchor) in corr.portals.iter().enumerate() {
        let a = verts[anchor.wall];
        let b = verts[(anchor.wall + 1) % nv];
        let len = a.dist(&b);
        let dir = Point2::new((b.x - a.x) / len, (b.y - a.y) / len);
        let coord_of = |u: f64| -> Result<f64, DeformError> {
            let p = corr.tgt.arc_point(u.rem_euclid(1.0))?;
            Ok(p.sub(&a).dot(&dir))
        };
        let (ta, tb) = anchor.pair.tgt;
        if ta.rem_euclid(1.0) < anchor.bounds.0 - 1e-9
            || tb.rem_euclid(1.0) > anchor.bounds.1 + 1e-9
        {
            return Err(DeformError::PortalOutsideWall(pi));
        }
        let ca = coord_of(corr.image_param(anchor.a))?;
        let cb = coord_of(corr.image_param(anchor.b))?;
        let qa = coord_of(ta)?;
        let qb = coord_of(tb)?;
        for &c in &[ca, cb, qa, qb] {
            if c < -1e-9 || c > len + 1e-9 {
                return Err(DeformError::PortalOutsideWall(pi));
            }
        }
        walls.entry(anchor.wall).or_default().push((ca, qa));
        walls.entry(anchor.wall).or_default().push((cb, qb));
    }
    let mut out = mesh.clone();
    for (wall, mut knots) in walls {
        let a = verts[wall];
        let b = verts[(wall + 1) % nv];
        let len = a.dist(&b);
        let dir = Point2::new((b.x - a.x) / len, (b.y - a.y) / len);
        let nrm = Point2::new(-dir.y, dir.x);
        knots.push((0.0, 0.0));
        knots.push((len, len));
        knots.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        knots.dedup_by(|x, y| (x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 + 1e-12 || w[1].1 < w[0].1 - 1e-9 {
                return Err(DeformError::PortalOutsideWall(wall));
            }
        }
        let remap = |t: f64| -> f64 {
            let mut i = 0;
            while i + 2 < knots.len() && t > knots[i + 1].0 {
                i += 1;
            }
            let (t0, q0) = knots[i];
            let (t1, q1) = knots[i + 1];
            q0 + (q1 - q0) * (t - t0) / (t1 - t0)
        };
        for v in out.vertices.iter_mut() {
            let p = v.horizontal();
            let rel = p.sub(&a);
            let t = rel.dot(&dir);
            let d = rel.dot(&nrm);
            if d.abs() > 1e-6 || t < -1e-9 || t > len + 1e-9 {
                continue;
            }
            let t2 = remap(t.clamp(0.0, len));
            v.x = a.x + dir.x * t2 + nrm.x * d;
            v.y = a.y + dir.y * t2 + nrm.y * d;
        }
    }
    Ok(out)
}

/// Distance each portal midpoint moved during snapping (MVC-mapped
/// midpoint vs final snapped midpoint), per portal.
pub fn portal_snap_offsets(corr: &OutlineCorrespondence) -> Result<Vec<f64>, DeformError> {
    let verts = corr.tgt.vertices();
    let nv = verts.len();
    let mut out = Vec::with_capacity(corr.portals.len());
    for anchor in &corr.portals {
        let a = verts[anchor.wall];
        let b = verts[(anchor.wall + 1) % nv];
        let len = a.dist(&b);
        let dir = Point2::new((b.x - a.x) / len, (b.y - a.y) / len);
        let coord_of = |u: f64| -> Result<f64, DeformError> {
            let p = corr.tgt.arc_point(u.rem_euclid(1.0))?;
            Ok(p.sub(&a).dot(&dir))
        };
        let mapped = (coord_of(corr.image_param(anchor.a))?
            + coord_of(corr.image_param(anchor.b))?)
            / 2.0;
        let snapped = (coord_of(anchor.pair.tgt.0)? + coord_of(anchor.pair.tgt.1)?) / 2.0;
        out.push((snapped - mapped).abs());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rigid objects

/// A labeled part of the mesh with provenance back into the full mesh.
#[derive(Debug, Clone)]
pub struct SubMesh {
    pub label: String,
    pub mesh: IndexedMesh,
    /// Horizontal centroid of the part's vertices.
    pub centroid: Point2,
    /// Part vertex index -> original mesh vertex index.
    pub vertex_map: Vec<usize>,
    /// Part face index -> original mesh face index.
    pub face_map: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RigidSplit {
    pub shell: SubMesh,
    pub objects: Vec<SubMesh>,
}

fn category(group: &str) -> &str {
    group.split('.').next().unwrap_or(group)
}

fn extract(mesh: &IndexedMesh, label: &str, face_ids: &[usize]) -> SubMesh {
    let mut vmap: Vec<usize> = Vec::new();
    let mut back: BTreeMap<usize, usize> = BTreeMap::new();
    let mut faces = Vec::with_capacity(face_ids.len());
    for &f in face_ids {
        let src = mesh.faces[f];
        let v = src.v.map(|orig| {
            *back.entry(orig).or_insert_with(|| {
                vmap.push(orig);
                vmap.len() - 1
            })
        });
        faces.push(Face { v, group: src.group });
    }
    let vertices: Vec<Point3> = vmap.iter().map(|&i| mesh.vertices[i]).collect();
    let centroid = if vertices.is_empty() {
        Point2::new(0.0, 0.0)
    } else {
        let mut c = Point2::new(0.0, 0.0);
        for v in &vertices {
            c.x += v.x;
            c.y += v.y;
        }
        c.scale(1.0 / vertices.len() as f64)
    };
    SubMesh {
        label: label.to_string(),
        mesh: IndexedMesh {
            vertices,
            faces,
            groups: mesh.groups.clone(),
        },
        centroid,
        vertex_map: vmap,
        face_map: face_ids.to_vec(),
    }
}

/// Partition by group label: shell categories stay together; every other
/// instance becomes one rigid object.
pub fn split_rigid(mesh: &IndexedMesh) -> Result<RigidSplit, DeformError> {
    let mut shell_faces = Vec::new();
    let mut object_faces: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let name = &mesh.groups[f.group];
        if SHELL_LABELS.contains(&category(name)) {
            shell_faces.push(fi);
        } else {
            object_faces.entry(f.group).or_default().push(fi);
        }
    }
    let mut shell = extract(mesh, "shell", &shell_faces);
    // vertices unused by any face ride along with the shell so merges
    // reproduce the original vertex set
    let mut used = vec![false; mesh.vertices.len()];
    for f in &mesh.faces {
        for &v in &f.v {
            used[v] = true;
        }
    }
    for (i, &u) in used.iter().enumerate() {
        if !u {
            shell.vertex_map.push(i);
            shell.mesh.vertices.push(mesh.vertices[i]);
        }
    }
    let objects = object_faces
        .into_iter()
        .map(|(g, faces)| extract(mesh, &mesh.groups[g].clone(), &faces))
        .collect();
    Ok(RigidSplit { shell, objects })
}

fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup_by(|a, b| (a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2, a: &Point2, b: &Point2| (a.sub(o)).cross(&b.sub(o));
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    // monotone chain: lower pass, then upper pass over the reversed order;
    // the pop guard must not reach below the start of the current pass
    for pass in 0..2 {
        let start = hull.len();
        let order: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in order {
            while hull.len() >= start + 2
                && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Minimal translation moving hull `a` out of hull `b` (separating-axis
/// test); None when already separated.
fn sat_mtv(a: &[Point2], b: &[Point2]) -> Option<Point2> {
    if a.len() < 3 || b.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, Point2)> = None;
    let centroid = |h: &[Point2]| {
        let mut c = Point2::new(0.0, 0.0);
        for p in h {
            c.x += p.x;
            c.y += p.y;
        }
        c.scale(1.0 / h.len() as f64)
    };
    let ca = centroid(a);
    let cb = centroid(b);
    for hull in [a, b] {
        for i in 0..hull.len() {
            let p = hull[i];
            let q = hull[(i + 1) % hull.len()];
            let edge = q.sub(&p);
            let len = edge.norm();
            if len < 1e-12 {
                continue;
            }
            let axis = Point2::new(-edge.y / len, edge.x / len);
            let proj = |h: &[Point2]| {
                let vals = h.iter().map(|v| v.dot(&axis));
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = h.iter().map(|v| v.dot(&axis)).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            };
            let (alo, ahi) = proj(a);
            let (blo, bhi) = proj(b);
            let overlap = ahi.min(bhi) - alo.max(blo);
            if overlap <= 1e-12 {
                return None;
            }
            if best.as_ref().map(|(bo, _)| overlap < *bo).unwrap_or(true) {
                let sign = if ca.sub(&cb).dot(&axis) >= 0.0 { 1.0 } else { -1.0 };
                best = Some((overlap, axis.scale(sign)));
            }
        }
    }
    best.map(|(ov, axis)| axis.scale(ov + 1e-9))
}

/// Minimal translation pushing a hull back inside the room outline; None
/// when already contained.
fn outline_mtv(hull: &[Point2], outline: &RectPolygon) -> Option<Point2> {
    // deepest vertex outside the outline
    let mut worst: Option<(f64, Point2, Point2)> = None;
    for p in hull {
        if !outline.contains_or_boundary(p, 1e-9) {
            let (u, d) = outline.project(p);
            let q = outline.arc_point(u).expect("projection param in range");
            if worst.as_ref().map(|(wd, _, _)| d > *wd).unwrap_or(true) {
                worst = Some((d, *p, q));
            }
        }
    }
    if let Some((d, p, q)) = worst {
        let dir = q.sub(&p).scale(1.0 / d);
        return Some(dir.scale(d + 1e-9));
    }
    // a reflex outline corner poking into the hull
    if hull.len() >= 3 {
        let centroid = {
            let mut c = Point2::new(0.0, 0.0);
            for p in hull {
                c.x += p.x;
                c.y += p.y;
            }
            c.scale(1.0 / hull.len() as f64)
        };
        for c in outline.vertices() {
            if point_in_hull(c, hull) {
                let u = {
                    let v = centroid.sub(c);
                    let n = v.norm();
                    if n < 1e-12 {
                        Point2::new(1.0, 0.0)
                    } else {
                        v.scale(1.0 / n)
                    }
                };
                // exit distance of the ray c - s*u through the hull
                let mut t_exit = f64::INFINITY;
                for i in 0..hull.len() {
                    let p = hull[i];
                    let q = hull[(i + 1) % hull.len()];
                    let edge = q.sub(&p);
                    let nrm = Point2::new(-edge.y, edge.x);
                    let denom = nrm.dot(&u);
                    if denom < -1e-12 {
                        let s = nrm.dot(&c.sub(&p)) / denom;
                        if s > 0.0 {
                            t_exit = t_exit.min(s);
                        }
                    }
                }
                if t_exit.is_finite() {
                    return Some(u.scale(t_exit + 1e-9));
                }
            }
        }
    }
    None
}

fn point_in_hull(p: &Point2, hull: &[Point2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    // strictly inside: every edge sees the point on the same side,
    // whichever way the hull happens to wind
    let mut sign = 0.0f64;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let c = b.sub(&a).cross(&p.sub(&a));
        if c.abs() < 1e-12 {
            return false;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

/// A placed rigid object: translation of the horizontal centroid plus an
/// optional uniform scale about the centroid.
#[derive(Debug, Clone)]
pub struct PlacedObject {
    pub label: String,
    pub translation: Point2,
    pub scale: f64,
}

fn transform_vertex(v: &Point3, centroid: &Point2, zc: f64, t: &Point2, scale: f64) -> Point3 {
    Point3::new(
        centroid.x + t.x + scale * (v.x - centroid.x),
        centroid.y + t.y + scale * (v.y - centroid.y),
        zc + scale * (v.z - zc),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entity {
    Shell,
    Object(usize),
}

/// Translate each object's centroid through the MVC map, resolve
/// collisions by pushing along the minimal-penetration direction, and
/// scale down (0.95 steps, floor 0.5) when pushing opens new collisions.
pub fn reinsert_objects(
    shell: &SubMesh,
    objects: &[SubMesh],
    corr: &OutlineCorrespondence,
) -> Result<(IndexedMesh, Vec<PlacedObject>), DeformError> {
    let cs = corr.src_points()?;
    let ct = corr.tgt_points()?;
    let outline = &corr.tgt;

    struct Placed {
        hull: Vec<Point2>,
        z: (f64, f64),
    }
    let mut placed_geo: Vec<Placed> = Vec::new();
    let mut placements: Vec<PlacedObject> = Vec::new();

    for obj in objects {
        let c = obj.centroid;
        let mapped = map_horizontal(&c, &cs, &ct)
            .ok_or_else(|| DeformError::PlacementFailure(obj.label.clone()))?;
        let zc = {
            let zs: f64 = obj.mesh.vertices.iter().map(|v| v.z).sum();
            zs / obj.mesh.vertices.len().max(1) as f64
        };
        let base_t = mapped.sub(&c);

        let geometry = |t: &Point2, scale: f64| -> (Vec<Point2>, (f64, f64)) {
            let pts: Vec<Point2> = obj
                .mesh
                .vertices
                .iter()
                .map(|v| transform_vertex(v, &c, zc, t, scale).horizontal())
                .collect();
            let zlo = obj
                .mesh
                .vertices
                .iter()
                .map(|v| zc + scale * (v.z - zc))
                .fold(f64::INFINITY, f64::min);
            let zhi = obj
                .mesh
                .vertices
                .iter()
                .map(|v| zc + scale * (v.z - zc))
                .fold(f64::NEG_INFINITY, f64::max);
            (convex_hull(&pts), (zlo, zhi))
        };
        let collisions = |hull: &[Point2], z: (f64, f64)| -> Vec<(Entity, Point2)> {
            let mut out = Vec::new();
            if let Some(mtv) = outline_mtv(hull, outline) {
                out.push((Entity::Shell, mtv));
            }
            for (i, p) in placed_geo.iter().enumerate() {
                if z.0 < p.z.1 - 1e-9 && p.z.0 < z.1 - 1e-9 {
                    if let Some(mtv) = sat_mtv(hull, &p.hull) {
                        out.push((Entity::Object(i), mtv));
                    }
                }
            }
            out
        };

        let mut scale = 1.0;
        let (final_t, final_hull, final_z) = 'outer: loop {
            if scale < 0.5 - 1e-12 {
                return Err(DeformError::PlacementFailure(obj.label.clone()));
            }
            let mut t = base_t;
            let (hull, z) = geometry(&t, scale);
            let initial: Vec<Entity> =
                collisions(&hull, z).into_iter().map(|(e, _)| e).collect();
            if initial.is_empty() {
                break 'outer (t, hull, z);
            }
            for _push in 0..64 {
                let (hull, z) = geometry(&t, scale);
                let cur = collisions(&hull, z);
                if cur.is_empty() {
                    break 'outer (t, hull, z);
                }
                if cur.iter().any(|(e, _)| !initial.contains(e)) {
                    scale *= 0.95;
                    continue 'outer;
                }
                let (_, mtv) = cur[0];
                t = t.add(&mtv);
            }
            scale *= 0.95;
        };
        placed_geo.push(Placed { hull: final_hull, z: final_z });
        placements.push(PlacedObject {
            label: obj.label.clone(),
            translation: final_t,
            scale,
        });
        let _ = zc; // z-center fixed per object
    }

    // merge back into the original indexing
    let total = shell
        .vertex_map
        .iter()
        .chain(objects.iter().flat_map(|o| o.vertex_map.iter()))
        .copied()
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    let mut vertices = vec![Point3::new(0.0, 0.0, 0.0); total];
    for (i, &orig) in shell.vertex_map.iter().enumerate() {
        vertices[orig] = shell.mesh.vertices[i];
    }
    for (obj, place) in objects.iter().zip(&placements) {
        let zc = {
            let zs: f64 = obj.mesh.vertices.iter().map(|v| v.z).sum();
            zs / obj.mesh.vertices.len().max(1) as f64
        };
        for (i, &orig) in obj.vertex_map.iter().enumerate() {
            vertices[orig] = transform_vertex(
                &obj.mesh.vertices[i],
                &obj.centroid,
                zc,
                &place.translation,
                place.scale,
            );
        }
    }
    let total_faces = shell
        .face_map
        .iter()
        .chain(objects.iter().flat_map(|o| o.face_map.iter()))
        .copied()
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    let placeholder = Face { v: [0, 0, 0], group: 0 };
    let mut faces = vec![placeholder; total_faces];
    for (i, &orig) in shell.face_map.iter().enumerate() {
        let f = shell.mesh.faces[i];
        faces[orig] = Face { v: f.v.map(|v| shell.vertex_map[v]), group: f.group };
    }
    for obj in objects {
        for (i, &orig) in obj.face_map.iter().enumerate() {
            let f = obj.mesh.faces[i];
            faces[orig] = Face { v: f.v.map(|v| obj.vertex_map[v]), group: f.group };
        }
    }
    Ok((
        IndexedMesh {
            vertices,
            faces,
            groups: shell.mesh.groups.clone(),
        },
        placements,
    ))
}

// ---------------------------------------------------------------------------
// End-to-end per-room deformation

/// Scale a layout-unit outline into the mesh's meter frame.
pub fn outline_to_meters(p: &RectPolygon) -> Result<RectPolygon, GeomError> {
    p.scaled(METERS_PER_UNIT)
}

/// Full per-room pipeline: split rigid objects, solve the outline
/// correspondence, cage-deform the shell, snap portals, reinsert objects.
pub fn deform_room(
    room: &Room,
    mesh: &IndexedMesh,
    target_outline: &RectPolygon,
    target_portals: &[crate::model::Portal],
    w: &CorrespondenceWeights,
) -> Result<(IndexedMesh, OutlineCorrespondence), DeformError> {
    if room.portals.len() != target_portals.len() {
        return Err(DeformError::PortalCountMismatch(
            room.portals.len(),
            target_portals.len(),
        ));
    }
    let src_m = outline_to_meters(&room.outline)?;
    let tgt_m = outline_to_meters(target_outline)?;
    let pairs: Vec<PortalPair> = room
        .portals
        .iter()
        .zip(target_portals)
        .map(|(s, t)| PortalPair { src: s.param_interval(), tgt: t.param_interval() })
        .collect();
    let split = split_rigid(mesh)?;
    let corr = correspond(&src_m, &tgt_m, &pairs, w)?;
    let shell_def = deform_shell(&split.shell.mesh, &corr)?;
    let snapped = snap_portals(&shell_def, &corr)?;
    let shell2 = SubMesh { mesh: snapped, ..split.shell.clone() };
    let (out, _) = reinsert_objects(&shell2, &split.objects, &corr)?;
    Ok((out, corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::model::RoomType;
    use crate::synth::{rect_room, synth_room_mesh};

    fn square(side: f64) -> RectPolygon {
        RectPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(side, 0.0),
            Point2::new(side, side),
            Point2::new(0.0, side),
        ])
        .unwrap()
    }

    fn rect(w: f64, h: f64) -> RectPolygon {
        RectPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(w, 0.0),
            Point2::new(w, h),
            Point2::new(0.0, h),
        ])
        .unwrap()
    }

    #[test]
    fn obj_round_trip_and_rejections() {
        let mesh = synth_room_mesh(
            &square(4.0),
            3.0,
            &[("bed.0".into(), Rect::new(1.0, 1.0, 1.0, 2.0), 0.0, 0.6)],
        );
        let text = mesh.to_obj();
        let back = IndexedMesh::from_obj(&text).unwrap();
        assert_eq!(mesh, back);

        assert!(matches!(
            IndexedMesh::from_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"),
            Err(DeformError::UngroupedFace(4))
        ));
        assert!(matches!(
            IndexedMesh::from_obj("g a\nf 1 2 3\n"),
            Err(DeformError::MalformedObj { .. })
        ));
        // quads fan-triangulate
        let quad = IndexedMesh::from_obj(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\ng floor.0\nf 1 2 3 4\n",
        )
        .unwrap();
        assert_eq!(quad.faces.len(), 2);
    }

    #[test]
    fn correspond_identity_square() {
        let s = square(10.0);
        let w = CorrespondenceWeights { n_samples: 4, ..Default::default() };
        let corr = correspond(&s, &s, &[], &w).unwrap();
        for (a, b) in corr.u_s.iter().zip(&corr.u_t) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // 4 matched corners, zero elasticity (even spacing) and normal cost
        assert!((corr.objective + 4.0).abs() < 1e-9, "objective {}", corr.objective);
    }

    #[test]
    fn correspond_scaled_square_params_unchanged() {
        let w = CorrespondenceWeights { n_samples: 12, ..Default::default() };
        let corr = correspond(&square(10.0), &square(25.0), &[], &w).unwrap();
        for (a, b) in corr.u_s.iter().zip(&corr.u_t) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(corr.sigma_t.iter().filter(|&&f| f).count() >= 4);
    }

    #[test]
    fn correspond_square_to_rect_matches_all_corners() {
        let w = CorrespondenceWeights { n_samples: 16, ..Default::default() };
        let corr = correspond(&square(10.0), &rect(20.0, 10.0), &[], &w).unwrap();
        // all 4 corners matched
        let matched = corr
            .sigma_s
            .iter()
            .zip(&corr.sigma_t)
            .filter(|(s, t)| **s && **t)
            .count();
        assert_eq!(matched, 4);
        // monotone
        let base = corr.u_t[0];
        let abs: Vec<f64> = corr.u_t.iter().map(|&u| (u - base).rem_euclid(1.0)).collect();
        for w2 in abs.windows(2) {
            assert!(w2[1] > w2[0], "{:?}", abs);
        }
        // better than (or equal to) the proportional baseline
        let baseline = correspondence_objective(
            &rect(20.0, 10.0),
            &corr.u_s,
            &corr.theta,
            &corr.sigma_s,
            &w,
        )
        .unwrap();
        assert!(corr.objective <= baseline + 1e-9);
    }

    #[test]
    fn correspond_portal_containment() {
        // portal on the right wall must land inside the target's right wall
        let src = square(10.0);
        let tgt = rect(20.0, 10.0);
        let pair = PortalPair {
            src: (0.3, 0.35),          // right wall of the square
            tgt: (20.0 / 60.0 + 0.05, 20.0 / 60.0 + 0.1), // right wall of the rect
        };
        let w = CorrespondenceWeights { n_samples: 16, ..Default::default() };
        let corr = correspond(&src, &tgt, &[pair], &w).unwrap();
        let anchor = &corr.portals[0];
        for s in [anchor.a, anchor.b] {
            let u = corr.image_param(s);
            assert!(
                u >= anchor.bounds.0 - 1e-9 && u <= anchor.bounds.1 + 1e-9,
                "endpoint image {u} outside {:?}",
                anchor.bounds
            );
        }
        // a portal interval spanning a target corner is rejected
        let bad = PortalPair { src: (0.3, 0.35), tgt: (0.30, 0.40) };
        assert!(matches!(
            correspond(&src, &tgt, &[bad], &w),
            Err(DeformError::PortalContainmentInfeasible(0))
        ));
    }

    #[test]
    fn deform_shell_identity_and_translation() {
        let s = square(4.0);
        let mesh = synth_room_mesh(&s, 3.0, &[]);
        let w = CorrespondenceWeights { n_samples: 16, ..Default::default() };
        let corr = correspond(&s, &s, &[], &w).unwrap();
        let out = deform_shell(&mesh, &corr).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&out.vertices) {
            assert!(a.dist(b) < 1e-9);
            assert_eq!(a.z.to_bits(), b.z.to_bits(), "z must be bit-identical");
        }

        let moved = s.translated(&Point2::new(7.0, -3.0));
        let corr2 = correspond(&s, &moved, &[], &w).unwrap();
        let out2 = deform_shell(&mesh, &corr2).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&out2.vertices) {
            assert!((b.x - a.x - 7.0).abs() < 1e-9 && (b.y - a.y + 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn snap_portal_hand_example() {
        // 10-unit top wall; identity cage leaves the portal at [4,5]; the
        // target interval [4.4, 5.4] forces a +0.4 wall warp
        let s = square(10.0);
        let u = [0.0, 0.1, 0.125, 0.25, 0.5, 0.75];
        let corr = OutlineCorrespondence {
            src: s.clone(),
            tgt: s.clone(),
            u_s: u.to_vec(),
            u_t: u.to_vec(),
            sigma_s: vec![true, false, false, true, true, true],
            sigma_t: vec![true, false, false, true, true, true],
            theta: vec![false, false, false, true, false, true],
            portals: vec![PortalAnchor {
                pair: PortalPair { src: (0.1, 0.125), tgt: (0.11, 0.135) },
                a: (1, 0.0),
                b: (2, 0.0),
                bounds: (0.0, 0.25),
                wall: 0,
            }],
            objective: 0.0,
        };
        // offsets report the +0.4 slide
        let offs = portal_snap_offsets(&corr).unwrap();
        assert_eq!(offs.len(), 1);
        assert!((offs[0] - 0.4).abs() < 1e-9, "offset {}", offs[0]);
        // hand-placed wall vertices: ends fixed, knots exact, spans
        // re-interpolated
        let mesh = IndexedMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(4.0, 0.0, 1.0),
                Point3::new(5.0, 0.0, 1.0),
                Point3::new(2.0, 0.0, 1.0),
                Point3::new(7.0, 0.0, 1.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(5.0, 5.0, 0.0), // off-wall: untouched
            ],
            faces: vec![
                Face { v: [0, 1, 3], group: 0 },
                Face { v: [2, 4, 5], group: 0 },
                Face { v: [0, 5, 6], group: 0 },
            ],
            groups: vec!["wall.0".into()],
        };
        let snapped = snap_portals(&mesh, &corr).unwrap();
        let xs: Vec<f64> = snapped.vertices.iter().map(|v| v.x).collect();
        assert!((xs[0] - 0.0).abs() < 1e-12);
        assert!((xs[1] - 4.4).abs() < 1e-9, "portal start {}", xs[1]);
        assert!((xs[2] - 5.4).abs() < 1e-9, "portal end {}", xs[2]);
        assert!((xs[3] - 2.2).abs() < 1e-9, "pre-portal span {}", xs[3]);
        assert!((xs[4] - 7.24).abs() < 1e-9, "post-portal span {}", xs[4]);
        assert!((xs[5] - 10.0).abs() < 1e-12);
        assert!(snapped.vertices[6] == mesh.vertices[6]);

        // target past the wall corner errors
        let mut bad = corr.clone();
        bad.portals[0].pair.tgt = (0.24, 0.265);
        assert!(matches!(
            snap_portals(&mesh, &bad),
            Err(DeformError::PortalOutsideWall(_))
        ));
    }

    #[test]
    fn split_rigid_counts_and_centroids() {
        let objs = vec![
            ("bed.0".to_string(), Rect::new(0.5, 0.5, 1.0, 2.0), 0.0, 0.6),
            ("table.1".to_string(), Rect::new(2.5, 2.5, 0.8, 0.8), 0.0, 0.7),
        ];
        let mesh = synth_room_mesh(&square(4.0), 3.0, &objs);
        let split = split_rigid(&mesh).unwrap();
        assert_eq!(split.objects.len(), 2);
        assert_eq!(split.objects[0].label, "bed.0");
        let c = split.objects[0].centroid;
        assert!((c.x - 1.0).abs() < 1e-9 && (c.y - 1.5).abs() < 1e-9);
        let face_total = split.shell.mesh.faces.len()
            + split.objects.iter().map(|o| o.mesh.faces.len()).sum::<usize>();
        assert_eq!(face_total, mesh.faces.len());

        // shell-only mesh: everything is shell
        let bare = synth_room_mesh(&square(4.0), 3.0, &[]);
        let split2 = split_rigid(&bare).unwrap();
        assert!(split2.objects.is_empty());
        assert_eq!(split2.shell.mesh.faces.len(), bare.faces.len());
    }

    #[test]
    fn reinsert_translation_preserves_rigidity() {
        let objs = vec![("bed.0".to_string(), Rect::new(1.0, 1.0, 1.0, 2.0), 0.0, 0.6)];
        let s = square(4.0);
        let mesh = synth_room_mesh(&s, 3.0, &objs);
        let split = split_rigid(&mesh).unwrap();
        let w = CorrespondenceWeights { n_samples: 16, ..Default::default() };
        let moved = s.translated(&Point2::new(10.0, 0.0));
        let corr = correspond(&s, &moved, &[], &w).unwrap();
        let shell = deform_shell(&split.shell.mesh, &corr).unwrap();
        let shell2 = SubMesh { mesh: shell, ..split.shell.clone() };
        let (out, placements) = reinsert_objects(&shell2, &split.objects, &corr).unwrap();
        assert_eq!(placements.len(), 1);
        assert!((placements[0].scale - 1.0).abs() < 1e-12);
        assert!((placements[0].translation.x - 10.0).abs() < 1e-9);
        // pairwise distances preserved
        let obj = &split.objects[0];
        for i in 0..obj.vertex_map.len() {
            for j in i + 1..obj.vertex_map.len() {
                let d0 = mesh.vertices[obj.vertex_map[i]].dist(&mesh.vertices[obj.vertex_map[j]]);
                let d1 = out.vertices[obj.vertex_map[i]].dist(&out.vertices[obj.vertex_map[j]]);
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reinsert_resolves_collisions() {
        // squeeze a wide room with two side-by-side objects into a narrow
        // target: their mapped footprints overlap
        let src = rect(8.0, 4.0);
        let tgt = rect(3.0, 4.0);
        let objs = vec![
            ("bed.0".to_string(), Rect::new(1.0, 1.0, 2.0, 2.0), 0.0, 1.0),
            ("bed.1".to_string(), Rect::new(5.2, 1.0, 1.4, 2.0), 0.0, 1.0),
        ];
        let mesh = synth_room_mesh(&src, 3.0, &objs);
        let split = split_rigid(&mesh).unwrap();
        let w = CorrespondenceWeights { n_samples: 24, ..Default::default() };
        let corr = correspond(&src, &tgt, &[], &w).unwrap();
        let shell = deform_shell(&split.shell.mesh, &corr).unwrap();
        let shell2 = SubMesh { mesh: shell, ..split.shell.clone() };
        let (out, placements) = reinsert_objects(&shell2, &split.objects, &corr).unwrap();
        // post-hoc oracle: hulls must not overlap and must sit inside
        let hulls: Vec<Vec<Point2>> = split
            .objects
            .iter()
            .map(|o| {
                convex_hull(
                    &o.vertex_map
                        .iter()
                        .map(|&vi| out.vertices[vi].horizontal())
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        assert!(sat_mtv(&hulls[0], &hulls[1]).is_none(), "objects still collide");
        for h in &hulls {
            assert!(outline_mtv(h, &tgt).is_none(), "object pokes out of the room");
        }
        for p in &placements {
            assert!(p.scale > 0.5 - 1e-12 && p.scale <= 1.0);
        }
    }

    #[test]
    fn deform_room_identity_is_exact() {
        let room = rect_room("r", RoomType::Bedroom, 40.0, 40.0, &[1]);
        let outline_m = outline_to_meters(&room.outline).unwrap();
        let mesh = synth_room_mesh(
            &outline_m,
            2.8,
            &[("bed.0".to_string(), Rect::new(0.5, 0.5, 1.2, 2.0), 0.0, 0.6)],
        );
        let w = CorrespondenceWeights { n_samples: 32, ..Default::default() };
        let (out, corr) =
            deform_room(&room, &mesh, &room.outline, &room.portals, &w).unwrap();
        assert_eq!(out.vertices.len(), mesh.vertices.len());
        for (a, b) in mesh.vertices.iter().zip(&out.vertices) {
            assert!(a.dist(b) < 1e-9, "{a:?} vs {b:?}");
        }
        assert!(portal_snap_offsets(&corr).unwrap()[0].abs() < 1e-9);
    }
}
