//! Domain data model: rooms, portals, floor plans, relation graphs, the
//! room database, ingestion filters and JSON serialization.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{decompose_maximal, GeomError, Point2, RectPolygon};
use crate::jsonio::to_canonical;

/// Interior overlap above this (square units) is a validity violation.
pub const OVERLAP_TOL: f64 = 1e-6;
/// Paired portal endpoints must coincide within this (units).
pub const ALIGN_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {expected}, got {got}")]
    Schema { expected: String, got: String },
    #[error("unsupported room type '{0}'")]
    UnknownRoomType(String),
    #[error("duplicate room id '{0}'")]
    DuplicateRoomId(String),
    #[error("database already rotation-augmented")]
    AlreadyAugmented,
    #[error("unknown room id '{0}'")]
    UnknownRoomRef(String),
    #[error("room '{room}': portal {portal} does not lie on a wall")]
    PortalOffWall { room: String, portal: usize },
    #[error("room '{0}': outline walls do not form a closed loop")]
    UnclosedOutline(String),
    #[error("room '{room}': portal {portal} lies on a non-rectilinear wall")]
    PortalOnSlantedWall { room: String, portal: usize },
    #[error("invalid relation graph: {0}")]
    InvalidGraph(String),
    #[error("invalid floor plan: {0}")]
    InvalidPlan(String),
    #[error("room '{room}': {reason}")]
    BadRoom { room: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    LivingRoom,
    Bedroom,
    Kitchen,
    Bathroom,
    Balcony,
    Storage,
}

impl RoomType {
    pub const ALL: [RoomType; 6] = [
        RoomType::LivingRoom,
        RoomType::Bedroom,
        RoomType::Kitchen,
        RoomType::Bathroom,
        RoomType::Balcony,
        RoomType::Storage,
    ];

    pub fn parse(s: &str) -> Result<RoomType, ModelError> {
        match s {
            "living_room" => Ok(RoomType::LivingRoom),
            "bedroom" => Ok(RoomType::Bedroom),
            "kitchen" => Ok(RoomType::Kitchen),
            "bathroom" => Ok(RoomType::Bathroom),
            "balcony" => Ok(RoomType::Balcony),
            "storage" => Ok(RoomType::Storage),
            other => Err(ModelError::UnknownRoomType(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RoomType::LivingRoom => "living_room",
            RoomType::Bedroom => "bedroom",
            RoomType::Kitchen => "kitchen",
            RoomType::Bathroom => "bathroom",
            RoomType::Balcony => "balcony",
            RoomType::Storage => "storage",
        }
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Portal facing: the outward normal of the host wall. Y grows downward,
/// so `Up` is -y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    Up,
    Down,
    Left,
    Right,
}

impl Facing {
    pub fn opposite(&self) -> Facing {
        match self {
            Facing::Up => Facing::Down,
            Facing::Down => Facing::Up,
            Facing::Left => Facing::Right,
            Facing::Right => Facing::Left,
        }
    }

    /// Facing after rotating the geometry by (x, y) -> (-y, x).
    pub fn rotated90(&self) -> Facing {
        match self {
            Facing::Up => Facing::Right,
            Facing::Right => Facing::Down,
            Facing::Down => Facing::Left,
            Facing::Left => Facing::Up,
        }
    }

    pub fn from_normal(n: &Point2) -> Facing {
        if n.x.abs() > n.y.abs() {
            if n.x > 0.0 {
                Facing::Right
            } else {
                Facing::Left
            }
        } else if n.y > 0.0 {
            Facing::Down
        } else {
            Facing::Up
        }
    }

    pub fn normal(&self) -> Point2 {
        match self {
            Facing::Up => Point2::new(0.0, -1.0),
            Facing::Down => Point2::new(0.0, 1.0),
            Facing::Left => Point2::new(-1.0, 0.0),
            Facing::Right => Point2::new(1.0, 0.0),
        }
    }

    pub fn is_vertical_wall(&self) -> bool {
        matches!(self, Facing::Left | Facing::Right)
    }
}

/// An opening on a room wall, stored in the room's unit-perimeter
/// parametrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portal {
    /// Midpoint parameter on the host outline.
    pub mid: f64,
    /// Length as a fraction of the unit perimeter.
    pub len: f64,
    pub facing: Facing,
    /// Host outline edge index.
    pub wall: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_hint: Option<String>,
}

impl Portal {
    pub fn param_interval(&self) -> (f64, f64) {
        (self.mid - self.len / 2.0, self.mid + self.len / 2.0)
    }

    /// Absolute endpoints of the portal on its host outline.
    pub fn segment(&self, outline: &RectPolygon) -> Result<(Point2, Point2), GeomError> {
        let (a, b) = self.param_interval();
        Ok((outline.arc_point(a)?, outline.arc_point(b)?))
    }

    pub fn midpoint(&self, outline: &RectPolygon) -> Result<Point2, GeomError> {
        outline.arc_point(self.mid)
    }

    /// Absolute half-length in layout units.
    pub fn radius(&self, outline: &RectPolygon) -> f64 {
        self.len * outline.perimeter() / 2.0
    }

    fn check_on_wall(&self, outline: &RectPolygon) -> bool {
        let corners = outline.corner_params();
        let n = corners.len();
        if self.wall >= n {
            return false;
        }
        let lo = corners[self.wall];
        let hi = if self.wall + 1 < n { corners[self.wall + 1] } else { 1.0 };
        let (a, b) = self.param_interval();
        let tol = 1e-9;
        a >= lo - tol
            && b <= hi + tol
            && Facing::from_normal(&outline.edge_outward_normal(self.wall)) == self.facing
    }
}

/// Build a portal from an absolute wall segment lying on the outline.
pub fn portal_from_segment(
    outline: &RectPolygon,
    a: &Point2,
    b: &Point2,
    pair_hint: Option<String>,
    tol: f64,
) -> Option<Portal> {
    let per = outline.perimeter();
    let mid_pt = Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let (u_mid, d_mid) = outline.project(&mid_pt);
    let (_, d_a) = outline.project(a);
    let (_, d_b) = outline.project(b);
    if d_mid > tol || d_a > tol || d_b > tol {
        return None;
    }
    let len = a.dist(b) / per;
    let wall = outline.edge_of_param(u_mid);
    let facing = Facing::from_normal(&outline.edge_outward_normal(wall));
    let portal = Portal {
        mid: u_mid,
        len,
        facing,
        wall,
        pair_hint,
    };
    if portal.check_on_wall(outline) {
        Some(portal)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    #[serde(rename = "type")]
    pub room_type: RoomType,
    pub outline: RectPolygon,
    pub portals: Vec<Portal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_ref: Option<String>,
    #[serde(default)]
    pub rotation: u16,
}

impl Room {
    pub fn area(&self) -> f64 {
        self.outline.area()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        for w in self.portals.windows(2) {
            if w[0].mid >= w[1].mid {
                return Err(ModelError::BadRoom {
                    room: self.id.clone(),
                    reason: "portal parameters not strictly increasing".into(),
                });
            }
        }
        for (i, p) in self.portals.iter().enumerate() {
            if !p.check_on_wall(&self.outline) {
                return Err(ModelError::PortalOffWall {
                    room: self.id.clone(),
                    portal: i,
                });
            }
        }
        Ok(())
    }

    /// The room rotated by 90 degrees, portals recomputed on the rotated
    /// outline.
    pub fn rotated90(&self, new_id: String) -> Result<Room, ModelError> {
        let outline = self.outline.rotated90();
        let mut portals = Vec::with_capacity(self.portals.len());
        for (i, p) in self.portals.iter().enumerate() {
            let (a, b) = p.segment(&self.outline)?;
            let (ra, rb) = (a.rot90(), b.rot90());
            let np = portal_from_segment(&outline, &ra, &rb, p.pair_hint.clone(), 1e-6)
                .ok_or(ModelError::PortalOffWall {
                    room: self.id.clone(),
                    portal: i,
                })?;
            portals.push(np);
        }
        portals.sort_by(|a, b| a.mid.partial_cmp(&b.mid).unwrap());
        Ok(Room {
            id: new_id,
            room_type: self.room_type,
            outline,
            portals,
            mesh_ref: self.mesh_ref.clone(),
            rotation: (self.rotation + 90) % 360,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    #[serde(rename = "type")]
    pub room_type: RoomType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(String, String)>,
}

impl RelationGraph {
    pub fn check(&self) -> Result<(), ModelError> {
        let ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        if ids.len() != self.nodes.len() {
            return Err(ModelError::InvalidGraph("duplicate node ids".into()));
        }
        let mut seen = BTreeSet::new();
        for (a, b) in &self.edges {
            if a == b {
                return Err(ModelError::InvalidGraph(format!("self loop at '{a}'")));
            }
            if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
                return Err(ModelError::InvalidGraph(format!(
                    "edge ({a}, {b}) references unknown node"
                )));
            }
            let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
            if !seen.insert(key) {
                return Err(ModelError::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
        }
        // connectivity
        if let Some(first) = self.nodes.first() {
            let mut visited = BTreeSet::new();
            let mut queue = VecDeque::from([first.id.as_str()]);
            visited.insert(first.id.as_str());
            while let Some(u) = queue.pop_front() {
                for (a, b) in &self.edges {
                    let v = if a == u {
                        b.as_str()
                    } else if b == u {
                        a.as_str()
                    } else {
                        continue;
                    };
                    if visited.insert(v) {
                        queue.push_back(v);
                    }
                }
            }
            if visited.len() != self.nodes.len() {
                return Err(ModelError::InvalidGraph("graph is not connected".into()));
            }
        }
        Ok(())
    }

    pub fn degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|(a, b)| a == id || b == id).count()
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .edges
            .iter()
            .filter_map(|(a, b)| {
                if a == id {
                    Some(b.as_str())
                } else if b == id {
                    Some(a.as_str())
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedRoom {
    pub room: Room,
    pub dx: f64,
    pub dy: f64,
}

impl PlacedRoom {
    pub fn world_outline(&self) -> RectPolygon {
        self.room.outline.translated(&Point2::new(self.dx, self.dy))
    }
}

/// One end of a portal pairing: (room slot index, portal index).
pub type PortalRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub rooms: Vec<PlacedRoom>,
    pub pairings: Vec<(PortalRef, PortalRef)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<RelationGraph>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Overlap { a: usize, b: usize, area: f64 },
    PortalMisaligned { pairing: usize, gap: f64 },
    FacingNotOpposite { pairing: usize },
    NonPositiveArea { room: usize },
    NotPerfectMatching { reference: PortalRef },
    BadPortalRef { pairing: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Overlap { a, b, area } => {
                write!(f, "rooms {a} and {b} overlap by {area} sq. units")
            }
            Violation::PortalMisaligned { pairing, gap } => {
                write!(f, "pairing {pairing} misaligned by {gap} units")
            }
            Violation::FacingNotOpposite { pairing } => {
                write!(f, "pairing {pairing} facings are not opposite")
            }
            Violation::NonPositiveArea { room } => {
                write!(f, "room {room} has non-positive area")
            }
            Violation::NotPerfectMatching { reference } => {
                write!(
                    f,
                    "portal ({}, {}) participates in more than one pairing",
                    reference.0, reference.1
                )
            }
            Violation::BadPortalRef { pairing } => {
                write!(f, "pairing {pairing} references a missing room or portal")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Interior overlap area of two rectilinear polygons.
pub fn overlap_area(a: &RectPolygon, b: &RectPolygon) -> f64 {
    let (amin, amax) = a.bbox();
    let (bmin, bmax) = b.bbox();
    if amax.x <= bmin.x || bmax.x <= amin.x || amax.y <= bmin.y || bmax.y <= amin.y {
        return 0.0;
    }
    let ra = decompose_maximal(a);
    let rb = decompose_maximal(b);
    let mut total = 0.0;
    for x in &ra {
        for y in &rb {
            total += x.intersection_area(y);
        }
    }
    total
}

impl FloorPlan {
    pub fn portal_world_segment(&self, r: usize, p: usize) -> Option<(Point2, Point2)> {
        let pr = self.rooms.get(r)?;
        let portal = pr.room.portals.get(p)?;
        portal.segment(&pr.world_outline()).ok()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let outlines: Vec<RectPolygon> = self.rooms.iter().map(|r| r.world_outline()).collect();
        for (i, o) in outlines.iter().enumerate() {
            if o.area() <= 0.0 {
                violations.push(Violation::NonPositiveArea { room: i });
            }
        }
        for i in 0..outlines.len() {
            for j in (i + 1)..outlines.len() {
                let area = overlap_area(&outlines[i], &outlines[j]);
                if area > OVERLAP_TOL {
                    violations.push(Violation::Overlap { a: i, b: j, area });
                }
            }
        }
        let mut used: HashMap<PortalRef, usize> = HashMap::new();
        for (k, (pa, pb)) in self.pairings.iter().enumerate() {
            let sa = self.portal_world_segment(pa.0, pa.1);
            let sb = self.portal_world_segment(pb.0, pb.1);
            let (sa, sb) = match (sa, sb) {
                (Some(x), Some(y)) => (x, y),
                _ => {
                    violations.push(Violation::BadPortalRef { pairing: k });
                    continue;
                }
            };
            for r in [*pa, *pb] {
                if let Some(_prev) = used.insert(r, k) {
                    violations.push(Violation::NotPerfectMatching { reference: r });
                }
            }
            let direct = sa.0.dist(&sb.0).max(sa.1.dist(&sb.1));
            let flipped = sa.0.dist(&sb.1).max(sa.1.dist(&sb.0));
            let gap = direct.min(flipped);
            if gap > ALIGN_TOL {
                violations.push(Violation::PortalMisaligned { pairing: k, gap });
            }
            let fa = self.rooms[pa.0].room.portals[pa.1].facing;
            let fb = self.rooms[pb.0].room.portals[pb.1].facing;
            if fa != fb.opposite() {
                violations.push(Violation::FacingNotOpposite { pairing: k });
            }
        }
        ValidationReport { violations }
    }
}

/// One node per placed room, one edge per portal pairing.
pub fn extract_graph(fp: &FloorPlan) -> Result<RelationGraph, ModelError> {
    let report = fp.validate();
    if !report.is_clean() {
        return Err(ModelError::InvalidPlan(
            report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let nodes = fp
        .rooms
        .iter()
        .enumerate()
        .map(|(i, r)| GraphNode {
            id: i.to_string(),
            room_type: r.room.room_type,
        })
        .collect();
    let edges = fp
        .pairings
        .iter()
        .map(|(a, b)| (a.0.to_string(), b.0.to_string()))
        .collect();
    let g = RelationGraph { nodes, edges };
    g.check()?;
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct RoomDatabase {
    rooms: BTreeMap<String, Room>,
    index: BTreeMap<(RoomType, usize), Vec<String>>,
    augmented: bool,
}

impl RoomDatabase {
    pub fn new(rooms: Vec<Room>) -> Result<RoomDatabase, ModelError> {
        let mut map = BTreeMap::new();
        for r in rooms {
            r.check()?;
            if map.insert(r.id.clone(), r.clone()).is_some() {
                return Err(ModelError::DuplicateRoomId(r.id));
            }
        }
        let mut db = RoomDatabase {
            rooms: map,
            index: BTreeMap::new(),
            augmented: false,
        };
        db.rebuild_index();
        db.augmented = db.rooms.values().any(|r| r.rotation != 0);
        Ok(db)
    }

    fn rebuild_index(&mut self) {
        self.index.clear();
        for (id, r) in &self.rooms {
            self.index
                .entry((r.room_type, r.portals.len()))
                .or_default()
                .push(id.clone());
        }
    }

    pub fn get(&self, id: &str) -> Option<&Room> {
        self.rooms.get(id)
    }

    pub fn len(&self) -> usize {
        self.rooms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }

    pub fn rooms(&self) -> impl Iterator<Item = &Room> {
        self.rooms.values()
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Rooms matching both the type label and the portal count.
    pub fn filter_candidates(&self, room_type: RoomType, portal_count: usize) -> Vec<String> {
        self.index
            .get(&(room_type, portal_count))
            .cloned()
            .unwrap_or_default()
    }

    /// Add the 90/180/270 degree variants of every room.
    pub fn augment_rotations(&self) -> Result<RoomDatabase, ModelError> {
        if self.augmented {
            return Err(ModelError::AlreadyAugmented);
        }
        let mut rooms: Vec<Room> = Vec::with_capacity(self.rooms.len() * 4);
        for r in self.rooms.values() {
            let r90 = r.rotated90(format!("{}@90", r.id))?;
            let r180 = r90.rotated90(format!("{}@180", r.id))?;
            let r270 = r180.rotated90(format!("{}@270", r.id))?;
            rooms.push(r.clone());
            rooms.push(r90);
            rooms.push(r180);
            rooms.push(r270);
        }
        let mut db = RoomDatabase::new(rooms)?;
        db.augmented = true;
        Ok(db)
    }
}

// ---------------------------------------------------------------------------
// Ingestion of raw annotated room records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPortal {
    pub a: [f64; 2],
    pub b: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRoom {
    pub id: String,
    #[serde(rename = "type")]
    pub room_type: String,
    pub walls: Vec<RawSegment>,
    #[serde(default)]
    pub portals: Vec<RawPortal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
}

const CHAIN_TOL: f64 = 1e-6;

fn chain_walls(raw: &RawRoom) -> Result<Vec<(Point2, Point2)>, ModelError> {
    let mut remaining: Vec<(Point2, Point2)> = raw
        .walls
        .iter()
        .map(|s| {
            (
                Point2::new(s.a[0], s.a[1]),
                Point2::new(s.b[0], s.b[1]),
            )
        })
        .collect();
    if remaining.is_empty() {
        return Err(ModelError::UnclosedOutline(raw.id.clone()));
    }
    let mut chain = vec![remaining.remove(0)];
    while !remaining.is_empty() {
        let tail = chain.last().unwrap().1;
        let pos = remaining.iter().position(|(a, b)| {
            a.dist(&tail) < CHAIN_TOL || b.dist(&tail) < CHAIN_TOL
        });
        match pos {
            Some(k) => {
                let (a, b) = remaining.remove(k);
                if a.dist(&tail) < CHAIN_TOL {
                    chain.push((a, b));
                } else {
                    chain.push((b, a));
                }
            }
            None => return Err(ModelError::UnclosedOutline(raw.id.clone())),
        }
    }
    let head = chain.first().unwrap().0;
    let tail = chain.last().unwrap().1;
    if head.dist(&tail) > CHAIN_TOL {
        return Err(ModelError::UnclosedOutline(raw.id.clone()));
    }
    Ok(chain)
}

fn is_axis_aligned(a: &Point2, b: &Point2) -> bool {
    (a.x - b.x).abs() < CHAIN_TOL || (a.y - b.y).abs() < CHAIN_TOL
}

/// Convert a raw annotated room record into a canonical [`Room`].
///
/// Slanted wall segments are replaced by their axis-aligned bounding-box
/// edges on the outward side. Only the longest portal per neighbor is
/// kept. Rooms with a portal on a slanted wall are rejected.
pub fn ingest_room(raw: &RawRoom) -> Result<Room, ModelError> {
    let room_type = RoomType::parse(&raw.room_type)?;
    let chain = chain_walls(raw)?;
    // loop orientation sign for outward-side selection
    let mut area2 = 0.0;
    for (a, b) in &chain {
        area2 += a.x * b.y - b.x * a.y;
    }
    let sign = if area2 >= 0.0 { 1.0 } else { -1.0 };
    let mut pts: Vec<Point2> = Vec::new();
    for (a, b) in &chain {
        pts.push(*a);
        if !is_axis_aligned(a, b) {
            // replace the slanted segment by the two bounding-box edges on
            // the outward side
            let d = b.sub(a);
            let outward = Point2::new(d.y * sign, -d.x * sign);
            let mid = Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
            let c1 = Point2::new(b.x, a.y);
            let c2 = Point2::new(a.x, b.y);
            let corner = if c1.sub(&mid).dot(&outward) >= c2.sub(&mid).dot(&outward) {
                c1
            } else {
                c2
            };
            pts.push(corner);
        }
    }
    let outline = RectPolygon::new(pts).map_err(|e| ModelError::BadRoom {
        room: raw.id.clone(),
        reason: format!("outline not rectilinearizable: {e}"),
    })?;

    // keep only the largest portal per neighbor
    let mut kept: Vec<(usize, &RawPortal)> = Vec::new();
    let mut best_by_neighbor: HashMap<&str, (usize, f64)> = HashMap::new();
    for (i, p) in raw.portals.iter().enumerate() {
        let len = Point2::new(p.a[0], p.a[1]).dist(&Point2::new(p.b[0], p.b[1]));
        match &p.neighbor {
            Some(n) => {
                let entry = best_by_neighbor.entry(n.as_str()).or_insert((i, len));
                if len > entry.1 {
                    *entry = (i, len);
                }
            }
            None => kept.push((i, p)),
        }
    }
    for (i, _) in best_by_neighbor.values() {
        kept.push((*i, &raw.portals[*i]));
    }
    kept.sort_by_key(|(i, _)| *i);

    let mut portals = Vec::with_capacity(kept.len());
    for (i, p) in kept {
        let a = Point2::new(p.a[0], p.a[1]);
        let b = Point2::new(p.b[0], p.b[1]);
        let mid = Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
        // host raw wall: the closest original segment
        let host = chain
            .iter()
            .min_by(|s, t| {
                seg_dist(&mid, s).partial_cmp(&seg_dist(&mid, t)).unwrap()
            })
            .unwrap();
        if !is_axis_aligned(&host.0, &host.1) {
            return Err(ModelError::PortalOnSlantedWall {
                room: raw.id.clone(),
                portal: i,
            });
        }
        let tol = 1e-6 * (1.0 + outline.perimeter());
        let portal = portal_from_segment(&outline, &a, &b, p.neighbor.clone(), tol).ok_or(
            ModelError::PortalOffWall {
                room: raw.id.clone(),
                portal: i,
            },
        )?;
        portals.push(portal);
    }
    portals.sort_by(|a, b| a.mid.partial_cmp(&b.mid).unwrap());
    let room = Room {
        id: raw.id.clone(),
        room_type,
        outline,
        portals,
        mesh_ref: raw.mesh.clone(),
        rotation: 0,
    };
    room.check()?;
    Ok(room)
}

fn seg_dist(p: &Point2, seg: &(Point2, Point2)) -> f64 {
    let d = seg.1.sub(&seg.0);
    let len2 = d.dot(&d);
    let t = if len2 < 1e-18 {
        0.0
    } else {
        (p.sub(&seg.0).dot(&d) / len2).clamp(0.0, 1.0)
    };
    p.dist(&Point2::new(seg.0.x + d.x * t, seg.0.y + d.y * t))
}

// ---------------------------------------------------------------------------
// Serialization documents
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RoomDoc {
    id: String,
    #[serde(rename = "type")]
    room_type: RoomType,
    outline: Vec<[f64; 2]>,
    portals: Vec<Portal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mesh: Option<String>,
    #[serde(default)]
    rotation: u16,
}

#[derive(Debug, Serialize, Deserialize)]
struct RoomDbDoc {
    schema: String,
    rooms: Vec<RoomDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RawRoomsDoc {
    pub schema: String,
    pub rooms: Vec<RawRoom>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlacedRoomDoc {
    room_id: String,
    dx: f64,
    dy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FloorPlanDoc {
    schema: String,
    rooms: Vec<PlacedRoomDoc>,
    pairings: Vec<[[usize; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph: Option<RelationGraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelGraphDoc {
    schema: String,
    nodes: Vec<GraphNode>,
    edges: Vec<(String, String)>,
}

fn check_schema(expected: &str, got: &str) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Schema {
            expected: expected.to_string(),
            got: got.to_string(),
        })
    }
}

fn room_to_doc(r: &Room) -> RoomDoc {
    RoomDoc {
        id: r.id.clone(),
        room_type: r.room_type,
        outline: r.outline.vertices().iter().map(|p| [p.x, p.y]).collect(),
        portals: r.portals.clone(),
        mesh: r.mesh_ref.clone(),
        rotation: r.rotation,
    }
}

fn room_from_doc(d: RoomDoc) -> Result<Room, ModelError> {
    let outline = RectPolygon::new(d.outline.iter().map(|p| Point2::new(p[0], p[1])).collect())?;
    let room = Room {
        id: d.id,
        room_type: d.room_type,
        outline,
        portals: d.portals,
        mesh_ref: d.mesh,
        rotation: d.rotation,
    };
    room.check()?;
    Ok(room)
}

impl RoomDatabase {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc = RoomDbDoc {
            schema: "roomdb/1".into(),
            rooms: self.rooms.values().map(room_to_doc).collect(),
        };
        Ok(to_canonical(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<RoomDatabase, ModelError> {
        let doc: RoomDbDoc = serde_json::from_str(s)?;
        check_schema("roomdb/1", &doc.schema)?;
        let rooms = doc
            .rooms
            .into_iter()
            .map(room_from_doc)
            .collect::<Result<Vec<_>, _>>()?;
        RoomDatabase::new(rooms)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RoomDatabase, ModelError> {
        RoomDatabase::from_json(&std::fs::read_to_string(path)?)
    }
}

impl FloorPlan {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc = FloorPlanDoc {
            schema: "floorplan/1".into(),
            rooms: self
                .rooms
                .iter()
                .map(|r| PlacedRoomDoc {
                    room_id: r.room.id.clone(),
                    dx: r.dx,
                    dy: r.dy,
                })
                .collect(),
            pairings: self
                .pairings
                .iter()
                .map(|(a, b)| [[a.0, a.1], [b.0, b.1]])
                .collect(),
            graph: self.graph.clone(),
        };
        Ok(to_canonical(&doc)?)
    }

    pub fn from_json(s: &str, db: &RoomDatabase) -> Result<FloorPlan, ModelError> {
        let doc: FloorPlanDoc = serde_json::from_str(s)?;
        check_schema("floorplan/1", &doc.schema)?;
        let rooms = doc
            .rooms
            .into_iter()
            .map(|r| {
                let room = db
                    .get(&r.room_id)
                    .ok_or_else(|| ModelError::UnknownRoomRef(r.room_id.clone()))?;
                Ok(PlacedRoom {
                    room: room.clone(),
                    dx: r.dx,
                    dy: r.dy,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let fp = FloorPlan {
            rooms,
            pairings: doc
                .pairings
                .into_iter()
                .map(|[a, b]| ((a[0], a[1]), (b[0], b[1])))
                .collect(),
            graph: doc.graph,
        };
        for (k, (a, b)) in fp.pairings.iter().enumerate() {
            let ok = |r: &PortalRef| {
                fp.rooms
                    .get(r.0)
                    .map_or(false, |pr| r.1 < pr.room.portals.len())
            };
            if !ok(a) || !ok(b) {
                return Err(ModelError::InvalidPlan(format!(
                    "pairing {k} references a missing room or portal"
                )));
            }
        }
        Ok(fp)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path, db: &RoomDatabase) -> Result<FloorPlan, ModelError> {
        FloorPlan::from_json(&std::fs::read_to_string(path)?, db)
    }

    /// A room database containing this plan's as-placed room geometry, with
    /// slot-qualified ids, plus the plan rewritten to reference it. Used to
    /// persist plans whose rooms were deformed by layout optimization.
    pub fn with_embedded_rooms(&self) -> (RoomDatabase, FloorPlan) {
        let rooms: Vec<Room> = self
            .rooms
            .iter()
            .enumerate()
            .map(|(i, pr)| {
                let mut r = pr.room.clone();
                r.id = format!("{}#{}", pr.room.id, i);
                r
            })
            .collect();
        let db = RoomDatabase::new(rooms.clone()).expect("slot ids are unique");
        let fp = FloorPlan {
            rooms: self
                .rooms
                .iter()
                .zip(rooms)
                .map(|(pr, r)| PlacedRoom {
                    room: r,
                    dx: pr.dx,
                    dy: pr.dy,
                })
                .collect(),
            pairings: self.pairings.clone(),
            graph: self.graph.clone(),
        };
        (db, fp)
    }
}

impl RelationGraph {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc = RelGraphDoc {
            schema: "relgraph/1".into(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        Ok(to_canonical(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<RelationGraph, ModelError> {
        let doc: RelGraphDoc = serde_json::from_str(s)?;
        check_schema("relgraph/1", &doc.schema)?;
        let g = RelationGraph {
            nodes: doc.nodes,
            edges: doc.edges,
        };
        g.check()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RelationGraph, ModelError> {
        RelationGraph::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn load_raw_rooms(path: &Path) -> Result<Vec<RawRoom>, ModelError> {
    let doc: RawRoomsDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    check_schema("rawrooms/1", &doc.schema)?;
    Ok(doc.rooms)
}
