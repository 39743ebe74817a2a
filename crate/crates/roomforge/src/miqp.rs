//! Layout-snapping mixed-integer quadratic program: build the program from
//! a (partial) floor plan, solve it with a depth-first branch-and-bound
//! over the binary variables using convex-QP relaxations, and write the
//! solved geometry back into the plan.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::geom::{decompose_maximal, rects_outline, GeomError, Point2, Rect};
use crate::model::{portal_from_segment, Facing, FloorPlan, ModelError, PortalRef};
use crate::qp::{solve_qp, QpError, QpProblem, QpRow, QpStatus};
use thiserror::Error;

const GRID_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MiqpError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("room {room} has no valid rectangle decomposition")]
    NoDecomposition { room: usize },
    #[error("portal {portal} of room {room} is not resident on any wall")]
    PortalOffWall { room: usize, portal: usize },
    #[error("cannot apply a solution with status {0:?}")]
    InfeasibleSolution(MiqpStatus),
    #[error("applied solution fails plan validation: {0}")]
    InvalidApplied(String),
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MiqpOptions {
    /// Minimal room width/height s, in layout units.
    pub min_room_size: f64,
    /// Minimal shared wall length L for an adjacency reward.
    pub adjacency_min_len: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Slack needed before warm_start fixes a pair's separation binaries.
    pub warm_margin: f64,
    /// Tiny anchor on positions so the optimum is unique and stays near the
    /// initial placement (positions carry no cost in the main objective).
    pub position_reg: f64,
}

impl Default for MiqpOptions {
    fn default() -> Self {
        MiqpOptions {
            min_room_size: 20.0,
            adjacency_min_len: 6.0,
            lambda1: 1.0,
            lambda2: 5.0,
            lambda3: 100.0,
            lambda4: 3.0,
            warm_margin: 0.0,
            position_reg: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RectInfo {
    pub room: usize,
    /// Initial geometry in the shifted (non-negative) frame.
    pub init: Rect,
}

#[derive(Debug, Clone)]
pub struct PortalInfo {
    pub room: usize,
    pub portal: usize,
    pub facing: Facing,
    /// First/last rect (global indices) spanned by the portal's wall:
    /// top/bottom-most for vertical walls, left/right-most for horizontal.
    pub wall_first: usize,
    pub wall_last: usize,
    /// Initial centroid and radius in the shifted frame.
    pub init: (f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    T,
    B,
    L,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    /// Rect `a` lies in direction `dir` of rect `b`.
    SigmaD { a: usize, b: usize, dir: Dir },
    SigmaA { a: usize, b: usize },
    Theta { a: usize, b: usize },
}

#[derive(Debug, Clone)]
pub struct BinaryInfo {
    pub kind: BinKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConKind {
    Eq,
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    NonNeg,
    MinRoomSize,
    NonOverlap,
    Binding,
    PortalConnection,
    PortalSliding,
    Adjacency,
    BinaryBound,
}

/// One linear constraint: terms . x (==|<=) rhs.
#[derive(Debug, Clone)]
pub struct LinCon {
    pub family: Family,
    pub kind: ConKind,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub label: String,
}

/// weight * (terms . x - constant)^2
#[derive(Debug, Clone)]
pub struct QuadTerm {
    pub weight: f64,
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct MiqpProgram {
    pub n_cont: usize,
    pub rects: Vec<RectInfo>,
    pub portals: Vec<PortalInfo>,
    /// Maps portal variable index to its (room slot, portal index).
    pub portal_refs: Vec<PortalRef>,
    pub binaries: Vec<BinaryInfo>,
    pub constraints: Vec<LinCon>,
    pub quad: Vec<QuadTerm>,
    pub linear: Vec<(usize, f64)>,
    /// Initial (hatted) values for the continuous variables.
    pub initial: Vec<f64>,
    pub big_m: f64,
    /// shifted = world + offset; all program coordinates are shifted.
    pub offset: Point2,
    /// Cross-room rect pairs skipped by distance pruning; re-checked
    /// after solving (lazy non-overlap).
    pub pruned_pairs: Vec<(usize, usize)>,
    pub options: MiqpOptions,
    pub room_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStatus {
    Optimal,
    /// Best incumbent at the time limit; optimality not proven.
    FeasibleTimeLimit,
    /// Proven infeasible by exhausting the binary tree.
    Infeasible,
    /// Time limit hit before any feasible incumbent was found.
    InfeasibleWithinBudget,
}

#[derive(Debug, Clone)]
pub struct MiqpSolution {
    pub status: MiqpStatus,
    /// Continuous variables followed by binaries (exact integers).
    pub assignment: Vec<f64>,
    pub objective: f64,
    /// Incumbent objective values in discovery order (non-increasing).
    pub incumbents: Vec<f64>,
    pub nodes_explored: usize,
    /// Set when the lazy non-overlap loop added binaries for pruned pairs;
    /// `assignment` then matches this program, not the original.
    pub augmented: Option<Box<MiqpProgram>>,
}

impl MiqpProgram {
    pub fn rx(&self, i: usize) -> usize {
        4 * i
    }
    pub fn ry(&self, i: usize) -> usize {
        4 * i + 1
    }
    pub fn rw(&self, i: usize) -> usize {
        4 * i + 2
    }
    pub fn rh(&self, i: usize) -> usize {
        4 * i + 3
    }
    pub fn px(&self, j: usize) -> usize {
        4 * self.rects.len() + 3 * j
    }
    pub fn py(&self, j: usize) -> usize {
        4 * self.rects.len() + 3 * j + 1
    }
    pub fn pr(&self, j: usize) -> usize {
        4 * self.rects.len() + 3 * j + 2
    }
    pub fn bin_var(&self, k: usize) -> usize {
        self.n_cont + k
    }
    pub fn n_vars(&self) -> usize {
        self.n_cont + self.binaries.len()
    }

    pub fn var_name(&self, v: usize) -> String {
        let nr = self.rects.len();
        if v < 4 * nr {
            let part = ["x", "y", "w", "h"][v % 4];
            format!("r{}_{part}", v / 4)
        } else if v < self.n_cont {
            let j = (v - 4 * nr) / 3;
            let part = ["px", "py", "pr"][(v - 4 * nr) % 3];
            format!("p{j}_{part}")
        } else {
            match self.binaries[v - self.n_cont].kind {
                BinKind::SigmaD { a, b, dir } => format!("sD{dir:?}_{a}_{b}"),
                BinKind::SigmaA { a, b } => format!("sA_{a}_{b}"),
                BinKind::Theta { a, b } => format!("th_{a}_{b}"),
            }
        }
    }

    /// True objective value of an assignment (constants included).
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for qt in &self.quad {
            let v: f64 = qt.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() - qt.constant;
            total += qt.weight * v * v;
        }
        for &(i, c) in &self.linear {
            total += c * x[i];
        }
        total
    }
}

fn gather_rects(fp: &FloorPlan) -> Result<Vec<RectInfo>, MiqpError> {
    let mut rects = Vec::new();
    for (r, placed) in fp.rooms.iter().enumerate() {
        let parts = decompose_maximal(&placed.world_outline());
        if parts.is_empty() {
            return Err(MiqpError::NoDecomposition { room: r });
        }
        for rect in parts {
            rects.push(RectInfo { room: r, init: rect });
        }
    }
    Ok(rects)
}

/// Which placed rooms already have every graph-adjacent room placed. Graph
/// node ids are room slot indices rendered as strings (the convention of
/// extract_graph); nodes for unplaced rooms carry non-slot ids. Plans
/// without a graph gate everything open.
fn slot_gates(fp: &FloorPlan) -> Vec<bool> {
    let n = fp.rooms.len();
    match &fp.graph {
        None => vec![true; n],
        Some(g) => (0..n)
            .map(|slot| {
                let id = slot.to_string();
                g.node(&id).is_some()
                    && g.neighbors(&id)
                        .iter()
                        .all(|nb| nb.parse::<usize>().map(|k| k < n).unwrap_or(false))
            })
            .collect(),
    }
}

pub fn build_program(fp: &FloorPlan, options: &MiqpOptions) -> Result<MiqpProgram, MiqpError> {
    let mut rects = gather_rects(fp)?;

    // shift the frame so all coordinates are non-negative
    let min_x = rects.iter().map(|r| r.init.x).fold(f64::INFINITY, f64::min);
    let min_y = rects.iter().map(|r| r.init.y).fold(f64::INFINITY, f64::min);
    let offset = Point2::new(-min_x, -min_y);
    for r in &mut rects {
        r.init.x += offset.x;
        r.init.y += offset.y;
    }
    let max_x = rects
        .iter()
        .map(|r| r.init.x + r.init.w)
        .fold(0.0, f64::max);
    let max_y = rects
        .iter()
        .map(|r| r.init.y + r.init.h)
        .fold(0.0, f64::max);
    let big_m = max_x + max_y;

    // portal variables and their wall runs
    let mut portals = Vec::new();
    let mut portal_refs = Vec::new();
    for (r, placed) in fp.rooms.iter().enumerate() {
        let outline = placed.world_outline();
        for (q, portal) in placed.room.portals.iter().enumerate() {
            let mid = portal
                .midpoint(&outline)
                .map_err(|_| MiqpError::PortalOffWall { room: r, portal: q })?;
            let radius = portal.radius(&outline);
            let verts = outline.vertices();
            let wa = verts[portal.wall];
            let wb = verts[(portal.wall + 1) % verts.len()];
            let (wall_first, wall_last) =
                wall_run(&rects, r, portal.facing, &wa.add(&offset), &wb.add(&offset))
                    .ok_or(MiqpError::PortalOffWall { room: r, portal: q })?;
            portals.push(PortalInfo {
                room: r,
                portal: q,
                facing: portal.facing,
                wall_first,
                wall_last,
                init: (mid.x + offset.x, mid.y + offset.y, radius),
            });
            portal_refs.push((r, q));
        }
    }

    let n_cont = 4 * rects.len() + 3 * portals.len();
    let mut p = MiqpProgram {
        n_cont,
        rects,
        portals,
        portal_refs,
        binaries: Vec::new(),
        constraints: Vec::new(),
        quad: Vec::new(),
        linear: Vec::new(),
        initial: Vec::new(),
        big_m,
        offset,
        pruned_pairs: Vec::new(),
        options: *options,
        room_count: fp.rooms.len(),
    };
    p.initial = initial_assignment(&p);

    // non-negativity on all continuous variables
    for v in 0..p.n_cont {
        p.constraints.push(LinCon {
            family: Family::NonNeg,
            kind: ConKind::Le,
            terms: vec![(v, -1.0)],
            rhs: 0.0,
            label: format!("nonneg_{}", p.var_name(v)),
        });
    }

    add_binding_constraints(&mut p);
    add_min_size_constraints(&mut p);
    add_portal_constraints(&mut p, fp);

    // cross-room pairs, with distance pruning
    let mut kept = Vec::new();
    for i in 0..p.rects.len() {
        for j in (i + 1)..p.rects.len() {
            if p.rects[i].room == p.rects[j].room {
                continue;
            }
            let (a, b) = (&p.rects[i].init, &p.rects[j].init);
            let sep = a.center().dist(&b.center());
            let diag = (a.w * a.w + a.h * a.h).sqrt() + (b.w * b.w + b.h * b.h).sqrt();
            if sep > diag {
                p.pruned_pairs.push((i, j));
            } else {
                kept.push((i, j));
            }
        }
    }
    let gates = slot_gates(fp);
    for (i, j) in kept {
        let reward = gates[p.rects[i].room] && gates[p.rects[j].room];
        add_pair_binaries(&mut p, i, j, reward);
    }

    add_objective(&mut p);
    Ok(p)
}

/// Rects of `room` whose `facing`-side edge lies on the wall segment
/// (shifted coordinates); returns (first, last) along the wall.
fn wall_run(
    rects: &[RectInfo],
    room: usize,
    facing: Facing,
    wa: &Point2,
    wb: &Point2,
) -> Option<(usize, usize)> {
    let tol = GRID_TOL;
    let mut on_wall: Vec<usize> = Vec::new();
    if facing.is_vertical_wall() {
        let wx = wa.x;
        let (lo, hi) = (wa.y.min(wb.y), wa.y.max(wb.y));
        for (gi, ri) in rects.iter().enumerate() {
            if ri.room != room {
                continue;
            }
            let edge_x = if facing == Facing::Left { ri.init.x } else { ri.init.x + ri.init.w };
            if (edge_x - wx).abs() < tol
                && ri.init.y >= lo - tol
                && ri.init.y + ri.init.h <= hi + tol
            {
                on_wall.push(gi);
            }
        }
        let first = on_wall
            .iter()
            .copied()
            .min_by(|&a, &b| rects[a].init.y.partial_cmp(&rects[b].init.y).unwrap())?;
        let last = on_wall
            .iter()
            .copied()
            .max_by(|&a, &b| {
                (rects[a].init.y + rects[a].init.h)
                    .partial_cmp(&(rects[b].init.y + rects[b].init.h))
                    .unwrap()
            })?;
        Some((first, last))
    } else {
        let wy = wa.y;
        let (lo, hi) = (wa.x.min(wb.x), wa.x.max(wb.x));
        for (gi, ri) in rects.iter().enumerate() {
            if ri.room != room {
                continue;
            }
            let edge_y = if facing == Facing::Up { ri.init.y } else { ri.init.y + ri.init.h };
            if (edge_y - wy).abs() < tol
                && ri.init.x >= lo - tol
                && ri.init.x + ri.init.w <= hi + tol
            {
                on_wall.push(gi);
            }
        }
        let first = on_wall
            .iter()
            .copied()
            .min_by(|&a, &b| rects[a].init.x.partial_cmp(&rects[b].init.x).unwrap())?;
        let last = on_wall
            .iter()
            .copied()
            .max_by(|&a, &b| {
                (rects[a].init.x + rects[a].init.w)
                    .partial_cmp(&(rects[b].init.x + rects[b].init.w))
                    .unwrap()
            })?;
        Some((first, last))
    }
}

fn initial_assignment(p: &MiqpProgram) -> Vec<f64> {
    let mut init = Vec::with_capacity(p.n_cont);
    for r in &p.rects {
        init.extend([r.init.x, r.init.y, r.init.w, r.init.h]);
    }
    for q in &p.portals {
        init.extend([q.init.0, q.init.1, q.init.2]);
    }
    init
}

/// Shared-edge equalities between decomposed rects of the same room. The
/// decomposition is a cell grid, so adjacent rects always share full edges.
fn add_binding_constraints(p: &mut MiqpProgram) {
    let tol = GRID_TOL;
    let mut cons = Vec::new();
    for i in 0..p.rects.len() {
        for j in 0..p.rects.len() {
            if i == j || p.rects[i].room != p.rects[j].room {
                continue;
            }
            let (a, b) = (&p.rects[i].init, &p.rects[j].init);
            // i directly left of j: shared vertical edge
            if (a.x + a.w - b.x).abs() < tol && (a.y - b.y).abs() < tol && (a.h - b.h).abs() < tol
            {
                cons.push(LinCon {
                    family: Family::Binding,
                    kind: ConKind::Eq,
                    terms: vec![(p.rx(i), 1.0), (p.rw(i), 1.0), (p.rx(j), -1.0)],
                    rhs: 0.0,
                    label: format!("bind_v_{i}_{j}_x"),
                });
                cons.push(LinCon {
                    family: Family::Binding,
                    kind: ConKind::Eq,
                    terms: vec![(p.ry(i), 1.0), (p.ry(j), -1.0)],
                    rhs: 0.0,
                    label: format!("bind_v_{i}_{j}_y"),
                });
                cons.push(LinCon {
                    family: Family::Binding,
                    kind: ConKind::Eq,
                    terms: vec![(p.rh(i), 1.0), (p.rh(j), -1.0)],
                    rhs: 0.0,
                    label: format!("bind_v_{i}_{j}_h"),
                });
            }
            // i directly above j: shared horizontal edge
            if (a.y + a.h - b.y).abs() < tol && (a.x - b.x).abs() < tol && (a.w - b.w).abs() < tol
            {
                cons.push(LinCon {
                    family: Family::Binding,
                    kind: ConKind::Eq,
                    terms: vec![(p.ry(i), 1.0), (p.rh(i), 1.0), (p.ry(j), -1.0)],
                    rhs: 0.0,
                    label: format!("bind_h_{i}_{j}_y"),
                });
                cons.push(LinCon {
                    family: Family::Binding,
                    kind: ConKind::Eq,
                    terms: vec![(p.rx(i), 1.0), (p.rx(j), -1.0)],
                    rhs: 0.0,
                    label: format!("bind_h_{i}_{j}_x"),
                });
                cons.push(LinCon {
                    family: Family::Binding,
                    kind: ConKind::Eq,
                    terms: vec![(p.rw(i), 1.0), (p.rw(j), -1.0)],
                    rhs: 0.0,
                    label: format!("bind_h_{i}_{j}_w"),
                });
            }
        }
    }
    p.constraints.extend(cons);
}

/// Spanning rect sequences R^x, R^y through the room bounding-box midline;
/// their summed widths/heights must reach the minimal room size.
fn add_min_size_constraints(p: &mut MiqpProgram) {
    let s = p.options.min_room_size;
    let mut cons = Vec::new();
    for room in 0..p.room_count {
        let members: Vec<usize> = (0..p.rects.len())
            .filter(|&i| p.rects[i].room == room)
            .collect();
        if members.is_empty() {
            continue;
        }
        let probe = |coords: &mut Vec<f64>| -> f64 {
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
            coords.dedup_by(|a, b| (*a - *b).abs() < GRID_TOL);
            let mid = (coords[0] + coords[coords.len() - 1]) / 2.0;
            let k = coords
                .iter()
                .position(|&c| c > mid + GRID_TOL)
                .unwrap_or(coords.len())
                .saturating_sub(1)
                .min(coords.len() - 2);
            (coords[k] + coords[k + 1]) / 2.0
        };
        let mut ys: Vec<f64> = members
            .iter()
            .flat_map(|&i| [p.rects[i].init.y, p.rects[i].init.y + p.rects[i].init.h])
            .collect();
        let py = probe(&mut ys);
        let row: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| {
                let r = &p.rects[i].init;
                r.y < py && py < r.y + r.h
            })
            .collect();
        if !row.is_empty() {
            cons.push(LinCon {
                family: Family::MinRoomSize,
                kind: ConKind::Le,
                terms: row.iter().map(|&i| (p.rw(i), -1.0)).collect(),
                rhs: -s,
                label: format!("minsize_w_room{room}"),
            });
        }
        let mut xs: Vec<f64> = members
            .iter()
            .flat_map(|&i| [p.rects[i].init.x, p.rects[i].init.x + p.rects[i].init.w])
            .collect();
        let px = probe(&mut xs);
        let col: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| {
                let r = &p.rects[i].init;
                r.x < px && px < r.x + r.w
            })
            .collect();
        if !col.is_empty() {
            cons.push(LinCon {
                family: Family::MinRoomSize,
                kind: ConKind::Le,
                terms: col.iter().map(|&i| (p.rh(i), -1.0)).collect(),
                rhs: -s,
                label: format!("minsize_h_room{room}"),
            });
        }
    }
    p.constraints.extend(cons);
}

fn add_portal_constraints(p: &mut MiqpProgram, fp: &FloorPlan) {
    let mut cons = Vec::new();
    for j in 0..p.portals.len() {
        let info = p.portals[j].clone();
        let (first, last) = (info.wall_first, info.wall_last);
        match info.facing {
            Facing::Up => {
                cons.push(LinCon {
                    family: Family::PortalSliding,
                    kind: ConKind::Eq,
                    terms: vec![(p.py(j), 1.0), (p.ry(first), -1.0)],
                    rhs: 0.0,
                    label: format!("slide_p{j}_on"),
                });
                slide_bounds_x(p, &mut cons, j, first, last);
            }
            Facing::Down => {
                cons.push(LinCon {
                    family: Family::PortalSliding,
                    kind: ConKind::Eq,
                    terms: vec![(p.py(j), 1.0), (p.ry(first), -1.0), (p.rh(first), -1.0)],
                    rhs: 0.0,
                    label: format!("slide_p{j}_on"),
                });
                slide_bounds_x(p, &mut cons, j, first, last);
            }
            Facing::Left => {
                cons.push(LinCon {
                    family: Family::PortalSliding,
                    kind: ConKind::Eq,
                    terms: vec![(p.px(j), 1.0), (p.rx(first), -1.0)],
                    rhs: 0.0,
                    label: format!("slide_p{j}_on"),
                });
                slide_bounds_y(p, &mut cons, j, first, last);
            }
            Facing::Right => {
                cons.push(LinCon {
                    family: Family::PortalSliding,
                    kind: ConKind::Eq,
                    terms: vec![(p.px(j), 1.0), (p.rx(first), -1.0), (p.rw(first), -1.0)],
                    rhs: 0.0,
                    label: format!("slide_p{j}_on"),
                });
                slide_bounds_y(p, &mut cons, j, first, last);
            }
        }
    }

    // paired portals coincide
    let index: BTreeMap<PortalRef, usize> = p
        .portal_refs
        .iter()
        .enumerate()
        .map(|(j, &r)| (r, j))
        .collect();
    for (k, (a, b)) in fp.pairings.iter().enumerate() {
        if let (Some(&ja), Some(&jb)) = (index.get(a), index.get(b)) {
            for (name, va, vb) in [
                ("px", p.px(ja), p.px(jb)),
                ("py", p.py(ja), p.py(jb)),
                ("pr", p.pr(ja), p.pr(jb)),
            ] {
                cons.push(LinCon {
                    family: Family::PortalConnection,
                    kind: ConKind::Eq,
                    terms: vec![(va, 1.0), (vb, -1.0)],
                    rhs: 0.0,
                    label: format!("pair{k}_{name}"),
                });
            }
        }
    }
    p.constraints.extend(cons);
}

fn slide_bounds_x(p: &MiqpProgram, cons: &mut Vec<LinCon>, j: usize, first: usize, last: usize) {
    // px >= x_first + pr ; px <= x_last + w_last - pr
    cons.push(LinCon {
        family: Family::PortalSliding,
        kind: ConKind::Le,
        terms: vec![(p.px(j), -1.0), (p.rx(first), 1.0), (p.pr(j), 1.0)],
        rhs: 0.0,
        label: format!("slide_p{j}_lo"),
    });
    cons.push(LinCon {
        family: Family::PortalSliding,
        kind: ConKind::Le,
        terms: vec![
            (p.px(j), 1.0),
            (p.rx(last), -1.0),
            (p.rw(last), -1.0),
            (p.pr(j), 1.0),
        ],
        rhs: 0.0,
        label: format!("slide_p{j}_hi"),
    });
}

fn slide_bounds_y(p: &MiqpProgram, cons: &mut Vec<LinCon>, j: usize, first: usize, last: usize) {
    cons.push(LinCon {
        family: Family::PortalSliding,
        kind: ConKind::Le,
        terms: vec![(p.py(j), -1.0), (p.ry(first), 1.0), (p.pr(j), 1.0)],
        rhs: 0.0,
        label: format!("slide_p{j}_lo"),
    });
    cons.push(LinCon {
        family: Family::PortalSliding,
        kind: ConKind::Le,
        terms: vec![
            (p.py(j), 1.0),
            (p.ry(last), -1.0),
            (p.rh(last), -1.0),
            (p.pr(j), 1.0),
        ],
        rhs: 0.0,
        label: format!("slide_p{j}_hi"),
    });
}

/// Non-overlap disjunction and adjacency binaries for a cross-room pair.
fn add_pair_binaries(p: &mut MiqpProgram, i: usize, j: usize, reward: bool) {
    let m = p.big_m;
    let l = p.options.adjacency_min_len;
    let push_bin = |p: &mut MiqpProgram, kind: BinKind| -> usize {
        let k = p.binaries.len();
        p.binaries.push(BinaryInfo { kind });
        let v = p.bin_var(k);
        p.constraints.push(LinCon {
            family: Family::BinaryBound,
            kind: ConKind::Le,
            terms: vec![(v, -1.0)],
            rhs: 0.0,
            label: format!("bin_lo_{}", p.var_name(v)),
        });
        p.constraints.push(LinCon {
            family: Family::BinaryBound,
            kind: ConKind::Le,
            terms: vec![(v, 1.0)],
            rhs: 1.0,
            label: format!("bin_hi_{}", p.var_name(v)),
        });
        v
    };

    let st = push_bin(p, BinKind::SigmaD { a: i, b: j, dir: Dir::T });
    let sb = push_bin(p, BinKind::SigmaD { a: i, b: j, dir: Dir::B });
    let sl = push_bin(p, BinKind::SigmaD { a: i, b: j, dir: Dir::L });
    let sr = push_bin(p, BinKind::SigmaD { a: i, b: j, dir: Dir::R });
    let mut cons = vec![
        // i above j: y_i + h_i <= y_j + M(1 - sT)
        LinCon {
            family: Family::NonOverlap,
            kind: ConKind::Le,
            terms: vec![(p.ry(i), 1.0), (p.rh(i), 1.0), (p.ry(j), -1.0), (st, m)],
            rhs: m,
            label: format!("noov_T_{i}_{j}"),
        },
        // i below j: y_i >= y_j + h_j - M(1 - sB)
        LinCon {
            family: Family::NonOverlap,
            kind: ConKind::Le,
            terms: vec![(p.ry(i), -1.0), (p.ry(j), 1.0), (p.rh(j), 1.0), (sb, m)],
            rhs: m,
            label: format!("noov_B_{i}_{j}"),
        },
        // i left of j: x_i + w_i <= x_j + M(1 - sL)
        LinCon {
            family: Family::NonOverlap,
            kind: ConKind::Le,
            terms: vec![(p.rx(i), 1.0), (p.rw(i), 1.0), (p.rx(j), -1.0), (sl, m)],
            rhs: m,
            label: format!("noov_L_{i}_{j}"),
        },
        // i right of j: x_i >= x_j + w_j - M(1 - sR)
        LinCon {
            family: Family::NonOverlap,
            kind: ConKind::Le,
            terms: vec![(p.rx(i), -1.0), (p.rx(j), 1.0), (p.rw(j), 1.0), (sr, m)],
            rhs: m,
            label: format!("noov_R_{i}_{j}"),
        },
        // at least one relationship holds
        LinCon {
            family: Family::NonOverlap,
            kind: ConKind::Le,
            terms: vec![(st, -1.0), (sb, -1.0), (sl, -1.0), (sr, -1.0)],
            rhs: -1.0,
            label: format!("noov_sum_{i}_{j}"),
        },
    ];

    let sa = push_bin(p, BinKind::SigmaA { a: i, b: j });
    let th = push_bin(p, BinKind::Theta { a: i, b: j });
    cons.extend([
        // x_i <= x_j + w_j - L*th + M(1 - sA)
        LinCon {
            family: Family::Adjacency,
            kind: ConKind::Le,
            terms: vec![(p.rx(i), 1.0), (p.rx(j), -1.0), (p.rw(j), -1.0), (th, l), (sa, m)],
            rhs: m,
            label: format!("adj1_{i}_{j}"),
        },
        // x_i + w_i >= x_j + L*th - M(1 - sA)
        LinCon {
            family: Family::Adjacency,
            kind: ConKind::Le,
            terms: vec![(p.rx(i), -1.0), (p.rw(i), -1.0), (p.rx(j), 1.0), (th, l), (sa, m)],
            rhs: m,
            label: format!("adj2_{i}_{j}"),
        },
        // y_i <= y_j + h_j - L(1 - th) + M(1 - sA)
        LinCon {
            family: Family::Adjacency,
            kind: ConKind::Le,
            terms: vec![(p.ry(i), 1.0), (p.ry(j), -1.0), (p.rh(j), -1.0), (th, -l), (sa, m)],
            rhs: m - l,
            label: format!("adj3_{i}_{j}"),
        },
        // y_i + h_i >= y_j + L(1 - th) - M(1 - sA)
        LinCon {
            family: Family::Adjacency,
            kind: ConKind::Le,
            terms: vec![(p.ry(i), -1.0), (p.rh(i), -1.0), (p.ry(j), 1.0), (th, -l), (sa, m)],
            rhs: m - l,
            label: format!("adj4_{i}_{j}"),
        },
    ]);
    p.constraints.extend(cons);

    // adjacency reward only once every graph neighbor of both rooms is placed
    if reward {
        p.linear.push((sa, -p.options.lambda3));
    }
}

fn add_objective(p: &mut MiqpProgram) {
    let mut quad = Vec::new();
    let reg = p.options.position_reg;
    if reg > 0.0 {
        for v in 0..p.n_cont {
            quad.push(QuadTerm {
                weight: reg,
                terms: vec![(v, 1.0)],
                constant: p.initial[v],
                label: format!("reg_{}", p.var_name(v)),
            });
        }
    }
    for i in 0..p.rects.len() {
        quad.push(QuadTerm {
            weight: p.options.lambda1,
            terms: vec![(p.rw(i), 1.0)],
            constant: p.rects[i].init.w,
            label: format!("dev_w_{i}"),
        });
        quad.push(QuadTerm {
            weight: p.options.lambda1,
            terms: vec![(p.rh(i), 1.0)],
            constant: p.rects[i].init.h,
            label: format!("dev_h_{i}"),
        });
    }
    for j in 0..p.portals.len() {
        quad.push(QuadTerm {
            weight: p.options.lambda2,
            terms: vec![(p.pr(j), 1.0)],
            constant: p.portals[j].init.2,
            label: format!("dev_pr_{j}"),
        });
        // portal position relative to its wall's extreme rect anchors
        let info = p.portals[j].clone();
        let (first, last) = (info.wall_first, info.wall_last);
        if info.facing.is_vertical_wall() {
            for (tag, anchor) in [("top", first), ("bot", last)] {
                quad.push(QuadTerm {
                    weight: p.options.lambda4,
                    terms: vec![(p.py(j), 1.0), (p.ry(anchor), -1.0)],
                    constant: info.init.1 - p.rects[anchor].init.y,
                    label: format!("dev_py_{j}_{tag}"),
                });
            }
        } else {
            for (tag, anchor) in [("left", first), ("right", last)] {
                quad.push(QuadTerm {
                    weight: p.options.lambda4,
                    terms: vec![(p.px(j), 1.0), (p.rx(anchor), -1.0)],
                    constant: info.init.0 - p.rects[anchor].init.x,
                    label: format!("dev_px_{j}_{tag}"),
                });
            }
        }
    }
    p.quad.extend(quad);
}

/// Fix binaries that the initial geometry already decides; leave only
/// ambiguous (e.g. overlapping) pairs free. Indexed by binary slot.
pub fn warm_start(p: &MiqpProgram) -> Vec<Option<u8>> {
    let margin = p.options.warm_margin;
    let l = p.options.adjacency_min_len;
    let mut fixing: Vec<Option<u8>> = vec![None; p.binaries.len()];
    // group sigma^D by pair
    let mut pair_bins: BTreeMap<(usize, usize), [Option<usize>; 4]> = BTreeMap::new();
    for (k, b) in p.binaries.iter().enumerate() {
        if let BinKind::SigmaD { a, b: bb, dir } = b.kind {
            let slot = match dir {
                Dir::T => 0,
                Dir::B => 1,
                Dir::L => 2,
                Dir::R => 3,
            };
            pair_bins.entry((a, bb)).or_default()[slot] = Some(k);
        }
    }
    for (&(i, j), bins) in &pair_bins {
        let (a, b) = (&p.rects[i].init, &p.rects[j].init);
        let slacks = [
            b.y - (a.y + a.h), // T: i above j
            a.y - (b.y + b.h), // B
            b.x - (a.x + a.w), // L
            a.x - (b.x + b.w), // R
        ];
        let best = (0..4).max_by(|&u, &v| slacks[u].partial_cmp(&slacks[v]).unwrap()).unwrap();
        if slacks[best] >= margin - 1e-9 {
            for (s, bin) in bins.iter().enumerate() {
                fixing[bin.unwrap()] = Some(u8::from(s == best));
            }
        }
    }
    // seed adjacency from current geometry: touching with enough shared length
    for (k, b) in p.binaries.iter().enumerate() {
        let (i, j, is_theta) = match b.kind {
            BinKind::SigmaA { a, b } => (a, b, false),
            BinKind::Theta { a, b } => (a, b, true),
            _ => continue,
        };
        let (a, bi) = (&p.rects[i].init, &p.rects[j].init);
        let x_ov = (a.x + a.w).min(bi.x + bi.w) - a.x.max(bi.x);
        let y_ov = (a.y + a.h).min(bi.y + bi.h) - a.y.max(bi.y);
        let touch_h = ((a.y + a.h) - bi.y).abs() < margin.max(GRID_TOL)
            || ((bi.y + bi.h) - a.y).abs() < margin.max(GRID_TOL);
        let touch_v = ((a.x + a.w) - bi.x).abs() < margin.max(GRID_TOL)
            || ((bi.x + bi.w) - a.x).abs() < margin.max(GRID_TOL);
        let horz_adj = touch_h && x_ov >= l; // shares a horizontal edge
        let vert_adj = touch_v && y_ov >= l; // shares a vertical edge
        fixing[k] = Some(if is_theta {
            u8::from(horz_adj)
        } else {
            u8::from(horz_adj || vert_adj)
        });
    }
    fixing
}

fn relaxation(p: &MiqpProgram, fixing: &[(usize, f64)]) -> QpProblem {
    let n = p.n_vars();
    let mut qp = QpProblem::new(n);
    for qt in &p.quad {
        for &(i, ci) in &qt.terms {
            for &(j, cj) in &qt.terms {
                qp.p_triplets.push((i, j, 2.0 * qt.weight * ci * cj));
            }
            qp.q[i] += -2.0 * qt.weight * qt.constant * ci;
        }
    }
    for &(i, c) in &p.linear {
        qp.q[i] += c;
    }
    for con in &p.constraints {
        let row = QpRow { terms: con.terms.clone(), rhs: con.rhs };
        match con.kind {
            ConKind::Eq => qp.eq.push(row),
            ConKind::Le => qp.ineq.push(row),
        }
    }
    for &(bin, val) in fixing {
        qp.eq.push(QpRow { terms: vec![(p.bin_var(bin), 1.0)], rhs: val });
    }
    qp
}

pub fn solve(p: &MiqpProgram, time_limit_s: f64) -> Result<MiqpSolution, MiqpError> {
    solve_with_fixing(p, &vec![None; p.binaries.len()], time_limit_s)
}

pub fn solve_with_fixing(
    p: &MiqpProgram,
    fixing: &[Option<u8>],
    time_limit_s: f64,
) -> Result<MiqpSolution, MiqpError> {
    let start = Instant::now();
    let mut sol = branch_and_bound(p, fixing, start, time_limit_s)?;
    if matches!(sol.status, MiqpStatus::Optimal | MiqpStatus::FeasibleTimeLimit) {
        // lazy non-overlap: re-check the distance-pruned pairs
        let violated: Vec<(usize, usize)> = p
            .pruned_pairs
            .iter()
            .copied()
            .filter(|&(i, j)| {
                solved_rect(p, &sol.assignment, i)
                    .intersection_area(&solved_rect(p, &sol.assignment, j))
                    > 1e-9
            })
            .collect();
        if !violated.is_empty() {
            let mut aug = p.clone();
            aug.pruned_pairs.retain(|pair| !violated.contains(pair));
            for (i, j) in violated {
                // lazy pairs get non-overlap enforcement, no adjacency reward
                add_pair_binaries(&mut aug, i, j, false);
            }
            let mut fix2: Vec<Option<u8>> = fixing.to_vec();
            fix2.resize(aug.binaries.len(), None);
            let mut sol2 = branch_and_bound(&aug, &fix2, start, time_limit_s)?;
            sol2.augmented = Some(Box::new(aug));
            return Ok(sol2);
        }
    }
    sol.augmented = None;
    Ok(sol)
}

fn solved_rect(p: &MiqpProgram, x: &[f64], i: usize) -> Rect {
    Rect::new(x[p.rx(i)], x[p.ry(i)], x[p.rw(i)], x[p.rh(i)])
}

/// Full assignment at the initial geometry with binaries derived from it;
/// None when the initial state violates any constraint (e.g. overlaps).
fn seed_assignment(p: &MiqpProgram, fixing: &[Option<u8>]) -> Option<Vec<f64>> {
    let mut x = vec![0.0; p.n_vars()];
    x[..p.n_cont].copy_from_slice(&p.initial);
    let geom = warm_start(p);
    for k in 0..p.binaries.len() {
        // a caller-imposed fixing overrides the geometric seed
        let v = fixing[k].or(geom[k])?;
        x[p.bin_var(k)] = f64::from(v);
    }
    for con in &p.constraints {
        let lhs: f64 = con.terms.iter().map(|&(i, c)| c * x[i]).sum();
        let bad = match con.kind {
            ConKind::Eq => (lhs - con.rhs).abs() > 1e-9,
            ConKind::Le => lhs - con.rhs > 1e-9,
        };
        if bad {
            return None;
        }
    }
    Some(x)
}

fn branch_and_bound(
    p: &MiqpProgram,
    fixing: &[Option<u8>],
    start: Instant,
    time_limit_s: f64,
) -> Result<MiqpSolution, MiqpError> {
    let base: Vec<(usize, f64)> = fixing
        .iter()
        .enumerate()
        .filter_map(|(k, f)| f.map(|v| (k, v as f64)))
        .collect();
    let free: Vec<usize> = (0..p.binaries.len())
        .filter(|k| fixing[*k].is_none())
        .collect();

    let mut best_obj = f64::INFINITY;
    let mut best_x: Option<Vec<f64>> = None;
    let mut incumbents = Vec::new();
    if let Some(x0) = seed_assignment(p, fixing) {
        best_obj = p.objective_value(&x0);
        best_x = Some(x0);
        incumbents.push(best_obj);
    }
    let mut nodes = 0usize;
    let mut timed_out = false;

    let mut stack: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    while let Some(node_fix) = stack.pop() {
        if start.elapsed().as_secs_f64() > time_limit_s {
            timed_out = true;
            break;
        }
        nodes += 1;
        let mut all_fix = base.clone();
        all_fix.extend(node_fix.iter().copied());
        let relax = relaxation(p, &all_fix);
        let rsol = solve_qp(&relax)?;
        if rsol.status == QpStatus::Infeasible {
            continue;
        }
        let bound = p.objective_value(&rsol.x);
        if bound >= best_obj - 1e-9 {
            continue;
        }
        // most fractional free binary not fixed at this node
        let node_set: Vec<usize> = node_fix.iter().map(|&(k, _)| k).collect();
        let frac = free
            .iter()
            .copied()
            .filter(|k| !node_set.contains(k))
            .map(|k| {
                let v = rsol.x[p.bin_var(k)];
                (k, v, (v - v.round()).abs())
            })
            .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
        match frac {
            Some((k, v, dist)) if dist > 1e-6 => {
                let near = v.round().clamp(0.0, 1.0);
                let mut far_fix = node_fix.clone();
                far_fix.push((k, 1.0 - near));
                let mut near_fix = node_fix;
                near_fix.push((k, near));
                stack.push(far_fix);
                stack.push(near_fix); // popped first: explore the rounding
            }
            _ => {
                // integral relaxation: polish with every binary pinned so the
                // incumbent satisfies the big-M rows at exact integers
                let mut pin = base.clone();
                for &k in &free {
                    let from_node = node_fix.iter().find(|&&(kk, _)| kk == k).map(|&(_, v)| v);
                    let v = from_node.unwrap_or_else(|| rsol.x[p.bin_var(k)].round());
                    pin.push((k, v.clamp(0.0, 1.0)));
                }
                let polished = solve_qp(&relaxation(p, &pin))?;
                if polished.status == QpStatus::Infeasible {
                    continue;
                }
                let mut x = polished.x;
                for &(k, v) in &pin {
                    x[p.bin_var(k)] = v;
                }
                let obj = p.objective_value(&x);
                if obj < best_obj - 1e-12 {
                    best_obj = obj;
                    best_x = Some(x);
                    incumbents.push(obj);
                }
            }
        }
    }

    let (status, assignment, objective) = match (best_x, timed_out) {
        (Some(x), false) => (MiqpStatus::Optimal, x, best_obj),
        (Some(x), true) => (MiqpStatus::FeasibleTimeLimit, x, best_obj),
        (None, false) => (MiqpStatus::Infeasible, vec![0.0; p.n_vars()], f64::INFINITY),
        (None, true) => (
            MiqpStatus::InfeasibleWithinBudget,
            vec![0.0; p.n_vars()],
            f64::INFINITY,
        ),
    };
    Ok(MiqpSolution {
        status,
        assignment,
        objective,
        incumbents,
        nodes_explored: nodes,
        augmented: None,
    })
}

#[derive(Debug, Clone)]
pub struct ConstraintViolation {
    pub family: Family,
    pub label: String,
    pub amount: f64,
}

/// Independent checker: re-evaluates every stored row and re-derives each
/// constraint family semantically from the program metadata, rather than
/// trusting solver residuals.
pub fn check_assignment(p: &MiqpProgram, x: &[f64], tol: f64) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    let mut flag = |family: Family, label: String, amount: f64| {
        if amount > tol {
            out.push(ConstraintViolation { family, label, amount });
        }
    };

    for con in &p.constraints {
        let lhs: f64 = con.terms.iter().map(|&(i, c)| c * x[i]).sum();
        let amount = match con.kind {
            ConKind::Eq => (lhs - con.rhs).abs(),
            ConKind::Le => lhs - con.rhs,
        };
        flag(con.family, con.label.clone(), amount);
    }
    // binary integrality
    for k in 0..p.binaries.len() {
        let v = x[p.bin_var(k)];
        flag(
            Family::BinaryBound,
            format!("integral_{}", p.var_name(p.bin_var(k))),
            (v - v.round()).abs(),
        );
    }
    // semantic: no cross-room rect pair overlaps (covers pruned pairs too)
    for i in 0..p.rects.len() {
        for j in (i + 1)..p.rects.len() {
            if p.rects[i].room == p.rects[j].room {
                continue;
            }
            let area = solved_rect(p, x, i).intersection_area(&solved_rect(p, x, j));
            flag(Family::NonOverlap, format!("sem_overlap_{i}_{j}"), area);
        }
    }
    // semantic: each room recomposes into a valid outline with size >= s
    for room in 0..p.room_count {
        let rects: Vec<Rect> = (0..p.rects.len())
            .filter(|&i| p.rects[i].room == room)
            .map(|i| solved_rect(p, x, i))
            .collect();
        match rects_outline(&rects) {
            Ok(poly) => {
                let (lo, hi) = poly.bbox();
                flag(
                    Family::MinRoomSize,
                    format!("sem_minsize_room{room}"),
                    (p.options.min_room_size - (hi.x - lo.x))
                        .max(p.options.min_room_size - (hi.y - lo.y)),
                );
            }
            Err(e) => flag(Family::Binding, format!("sem_recompose_room{room}: {e}"), f64::INFINITY),
        }
    }
    // semantic: sigma^D = 1 implies the geometric relation
    for (k, b) in p.binaries.iter().enumerate() {
        if x[p.bin_var(k)].round() != 1.0 {
            continue;
        }
        match b.kind {
            BinKind::SigmaD { a, b: bb, dir } => {
                let (ra, rb) = (solved_rect(p, x, a), solved_rect(p, x, bb));
                let gap = match dir {
                    Dir::T => rb.y - (ra.y + ra.h),
                    Dir::B => ra.y - (rb.y + rb.h),
                    Dir::L => rb.x - (ra.x + ra.w),
                    Dir::R => ra.x - (rb.x + rb.w),
                };
                flag(Family::NonOverlap, format!("sem_sigmaD_{a}_{bb}"), -gap);
            }
            BinKind::SigmaA { a, b: bb } => {
                let (ra, rb) = (solved_rect(p, x, a), solved_rect(p, x, bb));
                let x_ov = (ra.x + ra.w).min(rb.x + rb.w) - ra.x.max(rb.x);
                let y_ov = (ra.y + ra.h).min(rb.y + rb.h) - ra.y.max(rb.y);
                let shared = x_ov.max(0.0).max(y_ov.max(0.0));
                flag(
                    Family::Adjacency,
                    format!("sem_sigmaA_{a}_{bb}"),
                    p.options.adjacency_min_len - shared,
                );
            }
            BinKind::Theta { .. } => {}
        }
    }
    // semantic: paired portals coincide, from the plan pairings metadata
    // (already covered row-wise; the portal-on-wall relation is re-derived)
    for j in 0..p.portals.len() {
        let info = &p.portals[j];
        let (px, py, pr) = (x[p.px(j)], x[p.py(j)], x[p.pr(j)]);
        let rf = solved_rect(p, x, info.wall_first);
        let rl = solved_rect(p, x, info.wall_last);
        let (on, lo, hi) = match info.facing {
            Facing::Up => ((py - rf.y).abs(), rf.x + pr - px, px - (rl.x + rl.w - pr)),
            Facing::Down => ((py - (rf.y + rf.h)).abs(), rf.x + pr - px, px - (rl.x + rl.w - pr)),
            Facing::Left => ((px - rf.x).abs(), rf.y + pr - py, py - (rl.y + rl.h - pr)),
            Facing::Right => ((px - (rf.x + rf.w)).abs(), rf.y + pr - py, py - (rl.y + rl.h - pr)),
        };
        flag(Family::PortalSliding, format!("sem_slide_p{j}"), on.max(lo).max(hi));
    }
    out
}

/// Write a feasible solution back into the plan: recompose each room's
/// outline from its solved rects and re-derive portal parameters.
pub fn apply_solution(
    fp: &FloorPlan,
    p: &MiqpProgram,
    sol: &MiqpSolution,
) -> Result<FloorPlan, MiqpError> {
    if !matches!(sol.status, MiqpStatus::Optimal | MiqpStatus::FeasibleTimeLimit) {
        return Err(MiqpError::InfeasibleSolution(sol.status));
    }
    let prog = sol.augmented.as_deref().unwrap_or(p);
    let x = &sol.assignment;
    let mut out = fp.clone();
    for (slot, placed) in out.rooms.iter_mut().enumerate() {
        let rects: Vec<Rect> = (0..prog.rects.len())
            .filter(|&i| prog.rects[i].room == slot)
            .map(|i| {
                let r = solved_rect(prog, x, i);
                Rect::new(r.x - prog.offset.x, r.y - prog.offset.y, r.w, r.h)
            })
            .collect();
        let world = rects_outline(&rects)?;
        let (lo, _) = world.bbox();
        let local = world.translated(&Point2::new(-lo.x, -lo.y));
        placed.dx = lo.x;
        placed.dy = lo.y;

        let mut portals = placed.room.portals.clone();
        for (j, info) in prog.portals.iter().enumerate() {
            if info.room != slot {
                continue;
            }
            let (px, py, pr) = (
                x[prog.px(j)] - prog.offset.x,
                x[prog.py(j)] - prog.offset.y,
                x[prog.pr(j)],
            );
            let (a, b) = if info.facing.is_vertical_wall() {
                (Point2::new(px, py - pr), Point2::new(px, py + pr))
            } else {
                (Point2::new(px - pr, py), Point2::new(px + pr, py))
            };
            let la = Point2::new(a.x - lo.x, a.y - lo.y);
            let lb = Point2::new(b.x - lo.x, b.y - lo.y);
            let old = &placed.room.portals[info.portal];
            portals[info.portal] =
                portal_from_segment(&local, &la, &lb, old.pair_hint.clone(), 1e-6).ok_or(
                    MiqpError::PortalOffWall { room: slot, portal: info.portal },
                )?;
        }
        placed.room.outline = local;
        placed.room.portals = portals;
    }
    let report = out.validate();
    if !report.is_clean() {
        return Err(MiqpError::InvalidApplied(format!("{:?}", report.violations)));
    }
    Ok(out)
}

/// Deterministic LP-style text dump for debugging and reproducible diffs.
pub fn dump_lp(p: &MiqpProgram) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "\\ miqp program: {} rects, {} portals, {} binaries", p.rects.len(), p.portals.len(), p.binaries.len());
    let _ = writeln!(s, "\\ big_m {} offset ({}, {})", p.big_m, p.offset.x, p.offset.y);
    let _ = writeln!(s, "Minimize");
    for qt in &p.quad {
        let expr = expr_string(p, &qt.terms);
        let _ = writeln!(s, "  {} * ({} - {})^2  \\ {}", qt.weight, expr, qt.constant, qt.label);
    }
    for &(v, c) in &p.linear {
        let _ = writeln!(s, "  {} {}", c, p.var_name(v));
    }
    let _ = writeln!(s, "Subject To");
    for con in &p.constraints {
        let op = match con.kind {
            ConKind::Eq => "=",
            ConKind::Le => "<=",
        };
        let _ = writeln!(s, "  {}: {} {} {}", con.label, expr_string(p, &con.terms), op, con.rhs);
    }
    let _ = writeln!(s, "Binaries");
    for k in 0..p.binaries.len() {
        let _ = writeln!(s, "  {}", p.var_name(p.bin_var(k)));
    }
    let _ = writeln!(s, "Initial");
    for (v, val) in p.initial.iter().enumerate() {
        let _ = writeln!(s, "  {} = {}", p.var_name(v), val);
    }
    s
}

fn expr_string(p: &MiqpProgram, terms: &[(usize, f64)]) -> String {
    let mut parts = Vec::new();
    for &(v, c) in terms {
        parts.push(format!("{:+} {}", c, p.var_name(v)));
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RectPolygon;
    use crate::model::{PlacedRoom, Portal, Room, RoomType};

    fn square_room(id: &str, side: f64, portals: Vec<Portal>) -> Room {
        Room {
            id: id.into(),
            room_type: RoomType::Bedroom,
            outline: RectPolygon::new(vec![
                Point2::new(0.0, 0.0),
                Point2::new(side, 0.0),
                Point2::new(side, side),
                Point2::new(0.0, side),
            ])
            .unwrap(),
            portals,
            mesh_ref: None,
            rotation: 0,
        }
    }

    fn l_room(id: &str) -> Room {
        Room {
            id: id.into(),
            room_type: RoomType::LivingRoom,
            outline: RectPolygon::new(vec![
                Point2::new(0.0, 0.0),
                Point2::new(40.0, 0.0),
                Point2::new(40.0, 20.0),
                Point2::new(20.0, 20.0),
                Point2::new(20.0, 40.0),
                Point2::new(0.0, 40.0),
            ])
            .unwrap(),
            portals: vec![],
            mesh_ref: None,
            rotation: 0,
        }
    }

    fn plan(rooms: Vec<(Room, f64, f64)>, pairings: Vec<(PortalRef, PortalRef)>) -> FloorPlan {
        FloorPlan {
            rooms: rooms
                .into_iter()
                .map(|(room, dx, dy)| PlacedRoom { room, dx, dy })
                .collect(),
            pairings,
            graph: None,
        }
    }

    /// Two 30-unit squares with an 8-unit paired portal; room B starts with
    /// a `gap` between the facing walls.
    fn paired_fixture(gap: f64) -> FloorPlan {
        let pa = Portal {
            mid: 0.375,
            len: 8.0 / 120.0,
            facing: Facing::Right,
            wall: 1,
            pair_hint: None,
        };
        let pb = Portal {
            mid: 0.875,
            len: 8.0 / 120.0,
            facing: Facing::Left,
            wall: 3,
            pair_hint: None,
        };
        plan(
            vec![
                (square_room("a", 30.0, vec![pa]), 0.0, 0.0),
                (square_room("b", 30.0, vec![pb]), 30.0 + gap, 0.0),
            ],
            vec![((0, 0), (1, 0))],
        )
    }

    fn count_family(p: &MiqpProgram, f: Family) -> usize {
        p.constraints.iter().filter(|c| c.family == f).count()
    }

    /// Enumerate every binary assignment, solve each convex QP, take the
    /// best objective. Independent of branch-and-bound.
    fn exhaustive_oracle(p: &MiqpProgram) -> f64 {
        let nb = p.binaries.len();
        assert!(nb <= 12, "oracle limited to small instances");
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << nb) {
            let fixing: Vec<(usize, f64)> =
                (0..nb).map(|k| (k, f64::from((mask >> k) & 1))).collect();
            let sol = solve_qp(&relaxation(p, &fixing)).unwrap();
            if sol.status == QpStatus::Optimal {
                let mut x = sol.x;
                for &(k, v) in &fixing {
                    x[p.bin_var(k)] = v;
                }
                best = best.min(p.objective_value(&x));
            }
        }
        best
    }

    #[test]
    fn build_single_room_no_portals() {
        let fp = plan(vec![(square_room("a", 30.0, vec![]), 0.0, 0.0)], vec![]);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        assert_eq!(p.n_cont, 4);
        assert!(p.binaries.is_empty());
        assert_eq!(count_family(&p, Family::NonNeg), 4);
        assert_eq!(count_family(&p, Family::MinRoomSize), 2);
        assert_eq!(count_family(&p, Family::NonOverlap), 0);
    }

    #[test]
    fn build_two_rooms_one_pairing_counts() {
        let fp = paired_fixture(0.5);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        assert_eq!(p.rects.len(), 2);
        assert_eq!(p.portals.len(), 2);
        assert_eq!(p.n_cont, 8 + 6);
        let sd = p
            .binaries
            .iter()
            .filter(|b| matches!(b.kind, BinKind::SigmaD { .. }))
            .count();
        let sa = p
            .binaries
            .iter()
            .filter(|b| matches!(b.kind, BinKind::SigmaA { .. }))
            .count();
        let th = p
            .binaries
            .iter()
            .filter(|b| matches!(b.kind, BinKind::Theta { .. }))
            .count();
        assert_eq!((sd, sa, th), (4, 1, 1));
        assert_eq!(count_family(&p, Family::PortalConnection), 3);
        assert_eq!(count_family(&p, Family::PortalSliding), 6);
        // objective Hessian is PSD by construction: all quad weights positive
        assert!(p.quad.iter().all(|q| q.weight > 0.0));
    }

    #[test]
    fn build_l_room_binding_equalities() {
        let fp = plan(vec![(l_room("l"), 0.0, 0.0)], vec![]);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        assert_eq!(p.rects.len(), 3);
        assert_eq!(count_family(&p, Family::Binding), 6);
    }

    #[test]
    fn solve_identity_program() {
        let fp = plan(vec![(square_room("a", 30.0, vec![]), 0.0, 0.0)], vec![]);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        let sol = solve(&p, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-6);
        for (v, &init) in p.initial.iter().enumerate() {
            assert!(
                (sol.assignment[v] - init).abs() < 1e-5,
                "var {} moved: {} vs {}",
                p.var_name(v),
                sol.assignment[v],
                init
            );
        }
        let applied = apply_solution(&fp, &p, &sol).unwrap();
        assert!(applied.validate().is_clean());
        assert!((applied.rooms[0].world_outline().area() - 900.0).abs() < 1e-6);
    }

    #[test]
    fn solve_resolves_overlap_and_matches_oracle() {
        // two squares overlapping by 2 units horizontally; shape-only objective
        let fp = plan(
            vec![
                (square_room("a", 30.0, vec![]), 0.0, 0.0),
                (square_room("b", 30.0, vec![]), 28.0, 0.0),
            ],
            vec![],
        );
        let opts = MiqpOptions { lambda3: 0.0, lambda4: 0.0, ..MiqpOptions::default() };
        let p = build_program(&fp, &opts).unwrap();
        let sol = solve(&p, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        // sliding resolves the overlap without any width change; only the
        // tiny position anchor contributes
        assert!(sol.objective.abs() < 1e-3, "objective {}", sol.objective);
        for i in 0..2 {
            assert!((sol.assignment[p.rw(i)] - 30.0).abs() < 1e-3);
            assert!((sol.assignment[p.rh(i)] - 30.0).abs() < 1e-3);
        }
        let oracle = exhaustive_oracle(&p);
        assert!(
            (sol.objective - oracle).abs() <= 1e-5 * (1.0 + oracle.abs()),
            "solve {} vs oracle {oracle}",
            sol.objective
        );
        assert!(check_assignment(&p, &sol.assignment, 1e-6).is_empty());
        for w in sol.incumbents.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let applied = apply_solution(&fp, &p, &sol).unwrap();
        assert!(applied.validate().is_clean());
    }

    #[test]
    fn solve_with_adjacency_reward_matches_oracle() {
        let fp = plan(
            vec![
                (square_room("a", 30.0, vec![]), 0.0, 0.0),
                (square_room("b", 30.0, vec![]), 28.0, 0.0),
            ],
            vec![],
        );
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        let sol = solve(&p, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        let oracle = exhaustive_oracle(&p);
        assert!(
            (sol.objective - oracle).abs() <= 1e-5 * (1.0 + oracle.abs()),
            "solve {} vs oracle {oracle}",
            sol.objective
        );
        // adjacency reward makes the optimum strictly negative
        assert!(sol.objective < -50.0);
        assert!(check_assignment(&p, &sol.assignment, 1e-6).is_empty());
    }

    #[test]
    fn solve_proves_infeasible_when_pinned() {
        let fp = plan(
            vec![
                (square_room("a", 30.0, vec![]), 0.0, 0.0),
                (square_room("b", 30.0, vec![]), 28.0, 0.0),
            ],
            vec![],
        );
        let mut p = build_program(&fp, &MiqpOptions::default()).unwrap();
        // pin both rects to their initial overlapping geometry
        for v in 0..p.n_cont {
            p.constraints.push(LinCon {
                family: Family::Binding,
                kind: ConKind::Eq,
                terms: vec![(v, 1.0)],
                rhs: p.initial[v],
                label: format!("pin_{}", p.var_name(v)),
            });
        }
        let sol = solve(&p, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Infeasible);
    }

    #[test]
    fn warm_start_fixes_decided_pairs() {
        // valid layout: all binaries fixed
        let fp = plan(
            vec![
                (square_room("a", 30.0, vec![]), 0.0, 0.0),
                (square_room("b", 30.0, vec![]), 30.0, 0.0),
            ],
            vec![],
        );
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        let fixing = warm_start(&p);
        assert!(fixing.iter().all(|f| f.is_some()));
        // the touching pair is adjacent with a 30-unit shared edge
        let sa = p
            .binaries
            .iter()
            .position(|b| matches!(b.kind, BinKind::SigmaA { .. }))
            .unwrap();
        assert_eq!(fixing[sa], Some(1));

        // overlapping pair: exactly its 4 sigma^D are free
        let fp2 = plan(
            vec![
                (square_room("a", 30.0, vec![]), 0.0, 0.0),
                (square_room("b", 30.0, vec![]), 28.0, 0.0),
            ],
            vec![],
        );
        let p2 = build_program(&fp2, &MiqpOptions::default()).unwrap();
        let fixing2 = warm_start(&p2);
        let free: Vec<usize> = (0..fixing2.len()).filter(|&k| fixing2[k].is_none()).collect();
        assert_eq!(free.len(), 4);
        assert!(free
            .iter()
            .all(|&k| matches!(p2.binaries[k].kind, BinKind::SigmaD { .. })));
        // warm-started solve still resolves the overlap
        let sol = solve_with_fixing(&p2, &fixing2, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        assert!(check_assignment(&p2, &sol.assignment, 1e-6).is_empty());
    }

    #[test]
    fn portal_snap_aligns_paired_rooms() {
        let fp = paired_fixture(0.5);
        assert!(!fp.validate().is_clean()); // the 0.5 gap misaligns the portals
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        let sol = solve(&p, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        assert!(check_assignment(&p, &sol.assignment, 1e-6).is_empty());
        let applied = apply_solution(&fp, &p, &sol).unwrap();
        assert!(applied.validate().is_clean());
        // portal stayed on the shared wall with its radius intact
        let (a, b) = applied.portal_world_segment(0, 0).unwrap();
        assert!((a.dist(&b) - 8.0).abs() < 1e-4);
        let oracle = exhaustive_oracle(&p);
        assert!((sol.objective - oracle).abs() <= 1e-5 * (1.0 + oracle.abs()));
    }

    #[test]
    fn checker_flags_corrupted_assignment() {
        let fp = paired_fixture(0.5);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        let sol = solve(&p, 30.0).unwrap();
        let mut x = sol.assignment.clone();
        x[p.rw(0)] += 5.0; // widen rect 0: breaks sliding/overlap geometry
        assert!(!check_assignment(&p, &x, 1e-6).is_empty());
    }

    #[test]
    fn dump_is_deterministic() {
        let fp = paired_fixture(0.5);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        let d1 = dump_lp(&p);
        let d2 = dump_lp(&build_program(&fp, &MiqpOptions::default()).unwrap());
        assert_eq!(d1, d2);
        assert!(d1.contains("sDT_0_1"));
        assert!(d1.contains("pair0_px"));
        assert!(d1.contains("Binaries"));
    }

    #[test]
    fn lazy_loop_catches_pruned_overlap() {
        // rooms far apart initially (pair pruned), but portal pairing drags
        // them together: the lazy loop must add their non-overlap binaries
        let fp = paired_fixture(100.0);
        let p = build_program(&fp, &MiqpOptions::default()).unwrap();
        assert_eq!(p.pruned_pairs.len(), 1);
        assert!(p.binaries.is_empty());
        let sol = solve(&p, 30.0).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        let prog = sol.augmented.as_deref().unwrap_or(&p);
        assert!(check_assignment(prog, &sol.assignment, 1e-6).is_empty());
        let applied = apply_solution(&fp, &p, &sol).unwrap();
        assert!(applied.validate().is_clean());
    }
}
