//! Deterministic room-compatibility scoring and ranking, plus the random
//! retrieval baseline, behind a pluggable candidate-scorer interface.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{chamfer, normalize_outline, sample_outline, GeomError};
use crate::model::{Portal, Room, RoomDatabase, RoomType};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("rooms have different portal counts ({0} vs {1})")]
    PortalCountMismatch(usize, usize),
    #[error("no candidates with type {0} and {1} portals")]
    NoCandidates(RoomType, usize),
    #[error("room has zero area")]
    ZeroArea,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub lambda_a: f64,
    pub lambda_o: f64,
    pub lambda_p: f64,
    pub lambda_l: f64,
    pub lambda_d: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            lambda_a: 1.0,
            lambda_o: 0.5,
            lambda_p: 10.0,
            lambda_l: 0.5,
            lambda_d: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub total: f64,
    pub c_area: f64,
    pub c_outline: f64,
    pub c_portal: f64,
    /// Cyclic portal pairing offset that attains the minimum.
    pub pairing_offset: usize,
}

/// Area ratio penalty: max/min - 1.
pub fn c_area(rs: &Room, rt: &Room) -> Result<f64, RetrievalError> {
    let (a, b) = (rs.area(), rt.area());
    if a <= 0.0 || b <= 0.0 {
        return Err(RetrievalError::ZeroArea);
    }
    Ok(a.max(b) / a.min(b) - 1.0)
}

/// Two-way chamfer distance between n-point samples of the two outlines,
/// each normalized to unit area and centered.
pub fn c_outline(rs: &Room, rt: &Room, n: usize) -> Result<f64, RetrievalError> {
    let sample = |room: &Room| -> Result<Vec<crate::geom::Point2>, RetrievalError> {
        let norm = normalize_outline(&room.outline)?;
        let s = sample_outline(&norm, n)?;
        s.params
            .iter()
            .map(|&u| norm.arc_point(u).map_err(Into::into))
            .collect()
    };
    Ok(chamfer(&sample(rs)?, &sample(rt)?)?)
}

/// Portal matching cost in the unit outline parametrization.
pub fn c_match(p1: &Portal, p2: &Portal, w: &ScoreWeights) -> f64 {
    let dm = p1.mid - p2.mid;
    let dl = p1.len - p2.len;
    let dd = if p1.facing != p2.facing { 1.0 } else { 0.0 };
    dm * dm + w.lambda_l * dl * dl + w.lambda_d * dd
}

/// Best cyclic pairing of the two portal lists: (cost, offset).
/// Ties broken by the smallest offset.
pub fn c_portal(rs: &Room, rt: &Room, w: &ScoreWeights) -> Result<(f64, usize), RetrievalError> {
    let k = rs.portals.len();
    if k != rt.portals.len() {
        return Err(RetrievalError::PortalCountMismatch(k, rt.portals.len()));
    }
    if k == 0 {
        return Ok((0.0, 0));
    }
    let mut best = (f64::INFINITY, 0);
    for j in 0..k {
        let cost: f64 = (0..k)
            .map(|i| c_match(&rs.portals[i], &rt.portals[(i + j) % k], w))
            .sum();
        if cost < best.0 {
            best = (cost, j);
        }
    }
    Ok(best)
}

pub fn match_score(rs: &Room, rt: &Room, w: &ScoreWeights) -> Result<MatchScore, RetrievalError> {
    let ca = c_area(rs, rt)?;
    let co = c_outline(rs, rt, 250)?;
    let (cp, offset) = c_portal(rs, rt, w)?;
    Ok(MatchScore {
        total: w.lambda_a * ca + w.lambda_o * co + w.lambda_p * cp,
        c_area: ca,
        c_outline: co,
        c_portal: cp,
        pairing_offset: offset,
    })
}

/// Rank database candidates against a target room, ascending by total
/// score, ties broken by room id.
pub fn rank(
    db: &RoomDatabase,
    target: &Room,
    w: &ScoreWeights,
) -> Result<Vec<(String, MatchScore)>, RetrievalError> {
    let ids = db.filter_candidates(target.room_type, target.portals.len());
    if ids.is_empty() {
        return Err(RetrievalError::NoCandidates(
            target.room_type,
            target.portals.len(),
        ));
    }
    let mut scored = Vec::with_capacity(ids.len());
    for id in ids {
        let room = db.get(&id).expect("index consistent with contents");
        let score = match_score(room, target, w)?;
        scored.push((id, score));
    }
    scored.sort_by(|a, b| {
        a.1.total
            .partial_cmp(&b.1.total)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(scored)
}

/// Uniform random choice over the matching candidates (the "no net"
/// baseline), reproducible from the rng state.
pub fn random_retrieve<R: Rng>(
    db: &RoomDatabase,
    room_type: RoomType,
    portal_count: usize,
    rng: &mut R,
) -> Result<String, RetrievalError> {
    let ids = db.filter_candidates(room_type, portal_count);
    if ids.is_empty() {
        return Err(RetrievalError::NoCandidates(room_type, portal_count));
    }
    let k = rng.gen_range(0..ids.len());
    Ok(ids[k].clone())
}

/// Candidate proposal interface for the stitching pipeline. The learned
/// retrieval network of the original system would slot in here.
pub trait CandidateScorer {
    /// Propose up to `n` distinct candidate room ids for a slot, optionally
    /// ranked against the host room's portal the new room will connect to.
    fn propose(
        &self,
        db: &RoomDatabase,
        room_type: RoomType,
        portal_count: usize,
        host_portal: Option<&Portal>,
        n: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<String>, RetrievalError>;
}

/// "No net" baseline: distinct uniform draws.
pub struct RandomScorer;

impl CandidateScorer for RandomScorer {
    fn propose(
        &self,
        db: &RoomDatabase,
        room_type: RoomType,
        portal_count: usize,
        _host_portal: Option<&Portal>,
        n: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<String>, RetrievalError> {
        let ids = db.filter_candidates(room_type, portal_count);
        if ids.is_empty() {
            return Err(RetrievalError::NoCandidates(room_type, portal_count));
        }
        let mut out: Vec<String> = Vec::new();
        // draw without replacement, stopping once n distinct ids are found
        let mut pool = ids;
        while !pool.is_empty() && out.len() < n {
            let k = rng.gen_range(0..pool.len());
            out.push(pool.swap_remove(k));
        }
        Ok(out)
    }
}

/// Deterministic scorer: orders candidates by portal-geometry compatibility
/// with the host portal (length and facing terms of the matching cost).
pub struct PortalShapeScorer {
    pub weights: ScoreWeights,
}

impl CandidateScorer for PortalShapeScorer {
    fn propose(
        &self,
        db: &RoomDatabase,
        room_type: RoomType,
        portal_count: usize,
        host_portal: Option<&Portal>,
        n: usize,
        _rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<String>, RetrievalError> {
        let ids = db.filter_candidates(room_type, portal_count);
        if ids.is_empty() {
            return Err(RetrievalError::NoCandidates(room_type, portal_count));
        }
        let mut scored: Vec<(f64, String)> = ids
            .into_iter()
            .map(|id| {
                let room = db.get(&id).expect("index consistent");
                let cost = match host_portal {
                    Some(hp) => room
                        .portals
                        .iter()
                        .map(|p| {
                            let dl = p.len - hp.len;
                            let facing_pen = if p.facing != hp.facing.opposite() {
                                1.0
                            } else {
                                0.0
                            };
                            self.weights.lambda_l * dl * dl + self.weights.lambda_d * facing_pen
                        })
                        .fold(f64::INFINITY, f64::min),
                    None => 0.0,
                };
                (cost, id)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(n).map(|(_, id)| id).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point2, RectPolygon};
    use crate::model::Facing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect_room(id: &str, ty: RoomType, w: f64, h: f64, portals: Vec<Portal>) -> Room {
        Room {
            id: id.into(),
            room_type: ty,
            outline: RectPolygon::new(vec![
                Point2::new(0.0, 0.0),
                Point2::new(w, 0.0),
                Point2::new(w, h),
                Point2::new(0.0, h),
            ])
            .unwrap(),
            portals,
            mesh_ref: None,
            rotation: 0,
        }
    }

    fn portal(mid: f64, len: f64, facing: Facing, wall: usize) -> Portal {
        Portal { mid, len, facing, wall, pair_hint: None }
    }

    #[test]
    fn c_area_examples() {
        let a = rect_room("a", RoomType::Bedroom, 4.0, 5.0, vec![]); // 20
        let b = rect_room("b", RoomType::Bedroom, 2.0, 5.0, vec![]); // 10
        let c = rect_room("c", RoomType::Bedroom, 3.0, 4.0, vec![]); // 12
        let d = rect_room("d", RoomType::Bedroom, 3.0, 6.0, vec![]); // 18
        assert_eq!(c_area(&a, &a).unwrap(), 0.0);
        assert!((c_area(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((c_area(&c, &d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn c_outline_scale_translation_invariant() {
        let a = rect_room("a", RoomType::Bedroom, 10.0, 10.0, vec![]);
        let mut b = rect_room("b", RoomType::Bedroom, 30.0, 30.0, vec![]);
        b.outline = b.outline.translated(&Point2::new(17.0, -4.0));
        assert!(c_outline(&a, &a, 250).unwrap() < 1e-12);
        assert!(c_outline(&a, &b, 250).unwrap() < 1e-9);
        // square vs 2:1 rectangle matches a brute-force oracle
        let r = rect_room("r", RoomType::Bedroom, 20.0, 10.0, vec![]);
        let got = c_outline(&a, &r, 250).unwrap();
        let brute = {
            let sample = |room: &Room| -> Vec<Point2> {
                let norm = normalize_outline(&room.outline).unwrap();
                sample_outline(&norm, 250)
                    .unwrap()
                    .params
                    .iter()
                    .map(|&u| norm.arc_point(u).unwrap())
                    .collect()
            };
            chamfer(&sample(&a), &sample(&r)).unwrap()
        };
        assert!((got - brute).abs() < 1e-12);
        assert!(got > 0.0);
    }

    #[test]
    fn c_match_examples() {
        let w = ScoreWeights::default();
        let p = portal(0.2, 0.1, Facing::Up, 0);
        assert_eq!(c_match(&p, &p, &w), 0.0);
        let q = portal(0.2, 0.1, Facing::Down, 2);
        assert!((c_match(&p, &q, &w) - 0.05).abs() < 1e-12);
        let r = portal(0.5, 0.2, Facing::Up, 1);
        assert!((c_match(&p, &r, &w) - 0.095).abs() < 1e-12);
    }

    #[test]
    fn c_portal_cyclic_offsets() {
        let w = ScoreWeights::default();
        let a = rect_room(
            "a",
            RoomType::Bedroom,
            10.0,
            10.0,
            vec![portal(0.1, 0.05, Facing::Up, 0), portal(0.6, 0.05, Facing::Down, 2)],
        );
        assert_eq!(c_portal(&a, &a, &w).unwrap(), (0.0, 0));
        // offset 1 aligns exactly
        let b = rect_room(
            "b",
            RoomType::Bedroom,
            10.0,
            10.0,
            vec![portal(0.6, 0.05, Facing::Down, 2), portal(0.1, 0.05, Facing::Up, 0)],
        );
        let (cost, off) = c_portal(&a, &b, &w).unwrap();
        assert!(cost < 1e-12);
        assert_eq!(off, 1);
        // k=3 equals exhaustive enumeration
        let mk = |mids: [f64; 3]| {
            rect_room(
                "x",
                RoomType::Bedroom,
                10.0,
                10.0,
                mids.iter().map(|&m| portal(m, 0.04, Facing::Up, 0)).collect(),
            )
        };
        let x = mk([0.01, 0.1, 0.2]);
        let y = mk([0.05, 0.12, 0.22]);
        let (got, _) = c_portal(&x, &y, &w).unwrap();
        let brute = (0..3)
            .map(|j| {
                (0..3)
                    .map(|i| c_match(&x.portals[i], &y.portals[(i + j) % 3], &w))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((got - brute).abs() < 1e-12);
        // mismatched counts error
        assert!(c_portal(&a, &x, &w).is_err());
    }

    #[test]
    fn rank_verbatim_room_scores_zero() {
        let w = ScoreWeights::default();
        let rooms: Vec<Room> = (0..5)
            .map(|i| {
                rect_room(
                    &format!("r{i}"),
                    RoomType::Kitchen,
                    10.0 + i as f64 * 3.0,
                    10.0,
                    vec![portal(0.1, 0.05, Facing::Up, 0)],
                )
            })
            .collect();
        let target = rooms[2].clone();
        let db = RoomDatabase::new(rooms).unwrap();
        let ranked = rank(&db, &target, &w).unwrap();
        assert_eq!(ranked[0].0, "r2");
        assert!(ranked[0].1.total.abs() < 1e-9);
        for w2 in ranked.windows(2) {
            assert!(w2[0].1.total <= w2[1].1.total);
        }
        // re-invocation is stable
        let again = rank(&db, &target, &w).unwrap();
        let ids: Vec<&String> = ranked.iter().map(|(i, _)| i).collect();
        let ids2: Vec<&String> = again.iter().map(|(i, _)| i).collect();
        assert_eq!(ids, ids2);
        // absent type signals distinctly
        let absent = rect_room("t", RoomType::Balcony, 10.0, 10.0, vec![]);
        assert!(matches!(
            rank(&db, &absent, &w),
            Err(RetrievalError::NoCandidates(..))
        ));
    }

    #[test]
    fn rank_matches_brute_force_oracle() {
        let w = ScoreWeights::default();
        let rooms: Vec<Room> = (0..5)
            .map(|i| {
                rect_room(
                    &format!("r{i}"),
                    RoomType::Bedroom,
                    8.0 + i as f64 * 2.0,
                    12.0 - i as f64,
                    vec![portal(0.05 + 0.02 * i as f64, 0.03, Facing::Up, 0)],
                )
            })
            .collect();
        let target = rect_room(
            "t",
            RoomType::Bedroom,
            11.0,
            10.0,
            vec![portal(0.08, 0.03, Facing::Up, 0)],
        );
        let db = RoomDatabase::new(rooms.clone()).unwrap();
        let ranked = rank(&db, &target, &w).unwrap();
        let mut brute: Vec<(String, f64)> = rooms
            .iter()
            .map(|r| (r.id.clone(), match_score(r, &target, &w).unwrap().total))
            .collect();
        brute.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let got: Vec<&String> = ranked.iter().map(|(i, _)| i).collect();
        let exp: Vec<&String> = brute.iter().map(|(i, _)| i).collect();
        assert_eq!(got, exp);
    }

    #[test]
    fn random_retrieve_deterministic_and_uniform() {
        let rooms: Vec<Room> = (0..4)
            .map(|i| {
                rect_room(
                    &format!("r{i}"),
                    RoomType::Storage,
                    10.0,
                    10.0,
                    vec![portal(0.1, 0.05, Facing::Up, 0)],
                )
            })
            .collect();
        let db = RoomDatabase::new(rooms).unwrap();
        let single = RoomDatabase::new(vec![rect_room(
            "only",
            RoomType::Balcony,
            10.0,
            10.0,
            vec![],
        )])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            random_retrieve(&single, RoomType::Balcony, 0, &mut rng).unwrap(),
            "only"
        );
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(
            random_retrieve(&db, RoomType::Storage, 1, &mut r1).unwrap(),
            random_retrieve(&db, RoomType::Storage, 1, &mut r2).unwrap()
        );
        // chi-square against uniform over 10^4 draws, 4 bins
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..10_000 {
            let id = random_retrieve(&db, RoomType::Storage, 1, &mut rng).unwrap();
            let k: usize = id[1..].parse().unwrap();
            counts[k] += 1;
        }
        let expected = 2500.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 3 dof, 3 sigma-ish bound
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn random_scorer_draws_distinct() {
        let rooms: Vec<Room> = (0..6)
            .map(|i| rect_room(&format!("r{i}"), RoomType::Bedroom, 10.0, 10.0, vec![]))
            .collect();
        let db = RoomDatabase::new(rooms).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let picked = RandomScorer
            .propose(&db, RoomType::Bedroom, 0, None, 4, &mut rng)
            .unwrap();
        assert_eq!(picked.len(), 4);
        let set: std::collections::BTreeSet<&String> = picked.iter().collect();
        assert_eq!(set.len(), 4);
    }
}
