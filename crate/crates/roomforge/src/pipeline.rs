//! End-to-end generation strategies: smart portal stitching (insert rooms
//! one graph node at a time, snapping each with the MIQP) and 2D-before-3D
//! layout matching.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point2;
use crate::miqp::{
    apply_solution, build_program, solve_with_fixing, warm_start, MiqpError, MiqpOptions,
    MiqpStatus,
};
use crate::model::{
    FloorPlan, GraphNode, ModelError, PlacedRoom, PortalRef, RelationGraph, Room, RoomDatabase,
};
use crate::retrieval::{
    rank, CandidateScorer, MatchScore, PortalShapeScorer, RandomScorer, RetrievalError,
    ScoreWeights,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Miqp(#[from] MiqpError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("node {0} has no candidate rooms")]
    UnsatisfiableNode(String),
    #[error("target room {0} has no candidate rooms")]
    UnsatisfiableRoom(String),
    #[error("no facing-compatible free portal for the new room")]
    NoCompatiblePortal,
    #[error("all candidates failed at node {node}")]
    StepFailure { node: String, partial: Box<FloorPlan> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// The "no net" baseline: uniform draws without replacement.
    Random,
    /// Deterministic ranking by portal-geometry compatibility.
    PortalShape,
}

#[derive(Debug, Clone)]
pub struct StitchOptions {
    pub beam_width: usize,
    pub candidates_per_step: usize,
    /// Per-insertion MIQP time limit in seconds.
    pub time_limit_s: f64,
    pub seed: u64,
    /// A candidate whose objective exceeds this factor times the median of
    /// prior per-step best objectives is rejected (only applied when that
    /// median is positive; adjacency rewards routinely push costs negative).
    pub cost_ceiling_factor: f64,
    pub miqp: MiqpOptions,
    pub scorer: ScorerKind,
    pub weights: ScoreWeights,
}

impl Default for StitchOptions {
    fn default() -> Self {
        StitchOptions {
            beam_width: 5,
            candidates_per_step: 8,
            time_limit_s: 60.0,
            seed: 0,
            cost_ceiling_factor: 10.0,
            miqp: MiqpOptions::default(),
            scorer: ScorerKind::Random,
            weights: ScoreWeights::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamState {
    pub fp: FloorPlan,
    /// Graph node id -> room slot.
    pub placed: BTreeMap<String, usize>,
    /// Cumulative MIQP objective.
    pub cost: f64,
    pub last_room_id: String,
}

/// Lower is better; ties broken by insertion recency then room id at the
/// beam update point.
pub fn beam_score(state: &BeamState) -> f64 {
    state.cost
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub node: String,
    pub beam: usize,
    pub candidate: String,
    pub objective: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct StitchOutcome {
    pub plan: FloorPlan,
    pub cost: f64,
    pub trace: Vec<TraceRecord>,
}

/// Breadth-first order from the maximum-degree node; ties by node id.
/// Every node after the first has an already-ordered neighbor.
pub fn insertion_order(g: &RelationGraph) -> Result<Vec<String>, PipelineError> {
    g.check()?;
    let start = g
        .nodes
        .iter()
        .map(|n| n.id.clone())
        .max_by(|a, b| {
            g.degree(a)
                .cmp(&g.degree(b))
                .then_with(|| b.cmp(a)) // prefer the smaller id on ties
        })
        .expect("non-empty graph");
    let mut order = vec![start.clone()];
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    seen.insert(start, ());
    let mut head = 0;
    while head < order.len() {
        let cur = order[head].clone();
        head += 1;
        let mut nbrs: Vec<String> = g
            .neighbors(&cur)
            .into_iter()
            .filter(|n| !seen.contains_key(*n))
            .map(str::to_string)
            .collect();
        nbrs.sort();
        for n in nbrs {
            seen.insert(n.clone(), ());
            order.push(n);
        }
    }
    Ok(order)
}

#[derive(Debug, Clone)]
pub struct Placement {
    pub dx: f64,
    pub dy: f64,
    /// (host portal, portal index on the new room) — one per placed
    /// graph neighbor.
    pub pairings: Vec<(PortalRef, usize)>,
}

fn free_portals(fp: &FloorPlan, slot: usize) -> Vec<usize> {
    (0..fp.rooms[slot].room.portals.len())
        .filter(|&p| {
            !fp.pairings
                .iter()
                .any(|(a, b)| *a == (slot, p) || *b == (slot, p))
        })
        .collect()
}

/// Translate `room` so one of its portals lands exactly on a free,
/// facing-opposite portal of a placed neighbor (chosen uniformly by the
/// rng); remaining placed neighbors get the closest compatible free pair.
pub fn place_initial<R: Rng>(
    partial: &FloorPlan,
    room: &Room,
    neighbor_slots: &[usize],
    rng: &mut R,
) -> Result<Placement, PipelineError> {
    let mut primaries: Vec<(usize, usize, usize)> = Vec::new();
    for &slot in neighbor_slots {
        for hp in free_portals(partial, slot) {
            let hf = partial.rooms[slot].room.portals[hp].facing;
            for (np, portal) in room.portals.iter().enumerate() {
                if portal.facing == hf.opposite() {
                    primaries.push((slot, hp, np));
                }
            }
        }
    }
    if primaries.is_empty() {
        return Err(PipelineError::NoCompatiblePortal);
    }
    let (slot, hp, np) = primaries[rng.gen_range(0..primaries.len())];
    let host_mid = {
        let pr = &partial.rooms[slot];
        pr.room.portals[hp]
            .midpoint(&pr.room.outline)
            .map(|m| Point2::new(m.x + pr.dx, m.y + pr.dy))
            .map_err(ModelError::from)?
    };
    let new_mid = room.portals[np].midpoint(&room.outline).map_err(ModelError::from)?;
    let (dx, dy) = (host_mid.x - new_mid.x, host_mid.y - new_mid.y);

    let mut pairings = vec![((slot, hp), np)];
    let mut used_new = vec![np];
    for &other in neighbor_slots {
        if other == slot {
            continue;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for hp2 in free_portals(partial, other) {
            let hf = partial.rooms[other].room.portals[hp2].facing;
            let pr = &partial.rooms[other];
            let hm = pr.room.portals[hp2]
                .midpoint(&pr.room.outline)
                .map(|m| Point2::new(m.x + pr.dx, m.y + pr.dy))
                .map_err(ModelError::from)?;
            for (np2, portal) in room.portals.iter().enumerate() {
                if used_new.contains(&np2) || portal.facing != hf.opposite() {
                    continue;
                }
                let nm = portal.midpoint(&room.outline).map_err(ModelError::from)?;
                let d = hm.dist(&Point2::new(nm.x + dx, nm.y + dy));
                if best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
                    best = Some((d, hp2, np2));
                }
            }
        }
        let (_, hp2, np2) = best.ok_or(PipelineError::NoCompatiblePortal)?;
        pairings.push(((other, hp2), np2));
        used_new.push(np2);
    }
    Ok(Placement { dx, dy, pairings })
}

/// Rename graph node ids so placed nodes carry their room slot index (the
/// convention the MIQP adjacency gate reads); unplaced nodes keep a
/// non-numeric id.
fn gating_graph(g: &RelationGraph, placed: &BTreeMap<String, usize>) -> RelationGraph {
    let map_id = |id: &str| {
        placed
            .get(id)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("?{id}"))
    };
    RelationGraph {
        nodes: g
            .nodes
            .iter()
            .map(|n| GraphNode { id: map_id(&n.id), room_type: n.room_type })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|(a, b)| (map_id(a), map_id(b)))
            .collect(),
    }
}

fn derive_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    // splitmix64 mixing of the lineage key
    let mut z = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(tag.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(a.wrapping_mul(0x94d049bb133111eb))
        .wrapping_add(b.wrapping_add(0x2545f4914f6cdd1d));
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

pub fn stitch(
    g: &RelationGraph,
    db: &RoomDatabase,
    opts: &StitchOptions,
) -> Result<StitchOutcome, PipelineError> {
    let augmented;
    let db = if db.is_augmented() {
        db
    } else {
        augmented = db.augment_rotations()?;
        &augmented
    };
    let scorer: Box<dyn CandidateScorer> = match opts.scorer {
        ScorerKind::Random => Box::new(RandomScorer),
        ScorerKind::PortalShape => Box::new(PortalShapeScorer { weights: opts.weights }),
    };
    let order = insertion_order(g)?;
    let mut trace: Vec<TraceRecord> = Vec::new();

    // Rooms need one free portal per graph neighbor. An isolated node
    // (single-node graph) accepts the smallest portal count on offer.
    let effective_count = |ty, degree: usize| -> usize {
        if degree > 0 || !db.filter_candidates(ty, 0).is_empty() {
            return degree;
        }
        (1..=8)
            .find(|&c| !db.filter_candidates(ty, c).is_empty())
            .unwrap_or(0)
    };

    // first node: placement at the origin, no optimization
    let first = &order[0];
    let first_node = g.node(first).expect("ordered node exists");
    let first_degree = g.degree(first);
    let mut rng0 = derive_rng(opts.seed, 1, 0, 0);
    let cands = scorer
        .propose(
            db,
            first_node.room_type,
            effective_count(first_node.room_type, first_degree),
            None,
            opts.candidates_per_step,
            &mut rng0,
        )
        .map_err(|_| PipelineError::UnsatisfiableNode(first.clone()))?;
    let mut beam: Vec<BeamState> = Vec::new();
    for id in cands {
        let room = db.get(&id).expect("proposed id exists").clone();
        let mut placed = BTreeMap::new();
        placed.insert(first.clone(), 0usize);
        let fp = FloorPlan {
            rooms: vec![PlacedRoom { room, dx: 0.0, dy: 0.0 }],
            pairings: vec![],
            graph: Some(gating_graph(g, &placed)),
        };
        trace.push(TraceRecord {
            step: 0,
            node: first.clone(),
            beam: 0,
            candidate: id.clone(),
            objective: Some(0.0),
            status: "placed".into(),
        });
        beam.push(BeamState { fp, placed, cost: 0.0, last_room_id: id });
    }
    sort_beam(&mut beam);
    beam.truncate(opts.beam_width.max(1));

    let mut step_best: Vec<f64> = Vec::new();
    for (step, node_id) in order.iter().enumerate().skip(1) {
        let node = g.node(node_id).expect("ordered node exists");
        let degree = g.degree(node_id);
        let mut next: Vec<BeamState> = Vec::new();
        let mut any_candidates = false;
        for (b, state) in beam.iter().enumerate() {
            let neighbor_slots: Vec<usize> = g
                .neighbors(node_id)
                .iter()
                .filter_map(|n| state.placed.get(*n))
                .copied()
                .collect();
            let hint_portal = neighbor_slots
                .first()
                .and_then(|&s| free_portals(&state.fp, s).first().copied().map(|p| (s, p)))
                .map(|(s, p)| state.fp.rooms[s].room.portals[p].clone());
            let mut rng_c = derive_rng(opts.seed, 2, step as u64, 0);
            let cands = match scorer.propose(
                db,
                node.room_type,
                degree,
                hint_portal.as_ref(),
                opts.candidates_per_step,
                &mut rng_c,
            ) {
                Ok(c) => c,
                Err(_) => continue,
            };
            any_candidates = any_candidates || !cands.is_empty();
            for (ci, cand_id) in cands.iter().enumerate() {
                let room = db.get(cand_id).expect("proposed id exists").clone();
                let mut rng_p = derive_rng(opts.seed, 3, step as u64, ci as u64);
                let placement =
                    match place_initial(&state.fp, &room, &neighbor_slots, &mut rng_p) {
                        Ok(p) => p,
                        Err(_) => {
                            trace.push(TraceRecord {
                                step,
                                node: node_id.clone(),
                                beam: b,
                                candidate: cand_id.clone(),
                                objective: None,
                                status: "no_compatible_portal".into(),
                            });
                            continue;
                        }
                    };
                let mut trial = state.fp.clone();
                let new_slot = trial.rooms.len();
                trial.rooms.push(PlacedRoom {
                    room,
                    dx: placement.dx,
                    dy: placement.dy,
                });
                for (host, np) in &placement.pairings {
                    trial.pairings.push((*host, (new_slot, *np)));
                }
                let mut placed = state.placed.clone();
                placed.insert(node_id.clone(), new_slot);
                trial.graph = Some(gating_graph(g, &placed));

                let status;
                let mut objective = None;
                match build_program(&trial, &opts.miqp) {
                    Err(e) => status = format!("build_error: {e}"),
                    Ok(program) => {
                        let fixing = warm_start(&program);
                        match solve_with_fixing(&program, &fixing, opts.time_limit_s) {
                            Err(e) => status = format!("solve_error: {e}"),
                            Ok(sol)
                                if matches!(
                                    sol.status,
                                    MiqpStatus::Optimal | MiqpStatus::FeasibleTimeLimit
                                ) =>
                            {
                                match apply_solution(&trial, &program, &sol) {
                                    Err(e) => status = format!("apply_error: {e}"),
                                    Ok(snapped) => {
                                        objective = Some(sol.objective);
                                        let median = median_of(&step_best);
                                        let over_ceiling = median
                                            .map(|m| {
                                                m > 0.0
                                                    && sol.objective
                                                        > opts.cost_ceiling_factor * m
                                            })
                                            .unwrap_or(false);
                                        if over_ceiling {
                                            status = "over_cost_ceiling".into();
                                        } else {
                                            status = "accepted".into();
                                            next.push(BeamState {
                                                fp: snapped,
                                                placed,
                                                cost: state.cost + sol.objective,
                                                last_room_id: cand_id.clone(),
                                            });
                                        }
                                    }
                                }
                            }
                            Ok(sol) => status = format!("{:?}", sol.status),
                        }
                    }
                }
                trace.push(TraceRecord {
                    step,
                    node: node_id.clone(),
                    beam: b,
                    candidate: cand_id.clone(),
                    objective,
                    status,
                });
            }
        }
        if next.is_empty() {
            if !any_candidates {
                return Err(PipelineError::UnsatisfiableNode(node_id.clone()));
            }
            let partial = beam
                .first()
                .map(|s| s.fp.clone())
                .expect("beam never empty");
            return Err(PipelineError::StepFailure {
                node: node_id.clone(),
                partial: Box::new(partial),
            });
        }
        sort_beam(&mut next);
        next.truncate(opts.beam_width.max(1));
        step_best.push(
            next.iter()
                .map(|s| s.cost)
                .fold(f64::INFINITY, f64::min),
        );
        beam = next;
    }

    let best = beam.into_iter().next().expect("beam never empty");
    debug_assert!(best.fp.validate().is_clean());
    Ok(StitchOutcome { plan: best.fp, cost: best.cost, trace })
}

fn sort_beam(beam: &mut [BeamState]) {
    beam.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap()
            .then_with(|| a.last_room_id.cmp(&b.last_room_id))
    });
}

fn median_of(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(v[v.len() / 2])
}

/// 2D-before-3D: for every room slot of the target plan, the rank()-best
/// database candidate with its score.
pub fn match_layout(
    target: &FloorPlan,
    db: &RoomDatabase,
    w: &ScoreWeights,
) -> Result<Vec<(String, MatchScore)>, PipelineError> {
    let mut out = Vec::with_capacity(target.rooms.len());
    for placed in &target.rooms {
        let ranked = rank(db, &placed.room, w).map_err(|e| match e {
            RetrievalError::NoCandidates(..) => {
                PipelineError::UnsatisfiableRoom(placed.room.id.clone())
            }
            other => PipelineError::Retrieval(other),
        })?;
        let (id, score) = ranked.into_iter().next().expect("rank is non-empty");
        out.push((id, score));
    }
    Ok(out)
}
