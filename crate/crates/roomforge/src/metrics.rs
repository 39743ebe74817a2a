//! 3D-quality metrics: area/outline/portal change of a deformed room and
//! histogram Wasserstein distances of mesh statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deform::{portal_snap_offsets, DeformError, IndexedMesh, OutlineCorrespondence};
use crate::geom::{GeomError, Point2, RectPolygon};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error("source outline has zero area")]
    ZeroArea,
    #[error("mesh has no {0} samples")]
    EmptyMesh(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent area change of the outline.
    pub area_change: f64,
    /// Mean corresponding-point distance after centroid alignment.
    pub outline_change: f64,
    /// Mean portal midpoint displacement introduced by snapping.
    pub portal_change: f64,
    /// Triangle-area histogram Wasserstein distance.
    pub mesh_a: f64,
    /// Edge-length histogram Wasserstein distance.
    pub mesh_e: f64,
}

pub fn area_change(src: &RectPolygon, tgt: &RectPolygon) -> Result<f64, MetricsError> {
    let a_s = src.area();
    if a_s <= 0.0 {
        return Err(MetricsError::ZeroArea);
    }
    Ok(100.0 * (tgt.area() - a_s).abs() / a_s)
}

/// Mean distance between corresponding sample points, with the source
/// rigidly aligned to the target by sample centroid first.
pub fn outline_change(corr: &OutlineCorrespondence) -> Result<f64, MetricsError> {
    let src = corr.src_points()?;
    let tgt = corr.tgt_points()?;
    let centroid = |pts: &[Point2]| {
        let mut c = Point2::new(0.0, 0.0);
        for p in pts {
            c.x += p.x;
            c.y += p.y;
        }
        c.scale(1.0 / pts.len() as f64)
    };
    let cs = centroid(&src);
    let ct = centroid(&tgt);
    let shift = ct.sub(&cs);
    let sum: f64 = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| s.add(&shift).dist(t))
        .sum();
    Ok(sum / src.len() as f64)
}

/// Mean distance between each portal's MVC-mapped midpoint and its final
/// snapped midpoint; zero when the room has no portals.
pub fn portal_change(corr: &OutlineCorrespondence) -> Result<f64, MetricsError> {
    let offs = portal_snap_offsets(corr)?;
    if offs.is_empty() {
        return Ok(0.0);
    }
    Ok(offs.iter().sum::<f64>() / offs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshStat {
    TriangleArea,
    EdgeLength,
}

fn stat_samples(mesh: &IndexedMesh, stat: MeshStat) -> Vec<f64> {
    match stat {
        MeshStat::TriangleArea => (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect(),
        MeshStat::EdgeLength => {
            let mut edges: Vec<(usize, usize)> = mesh
                .faces
                .iter()
                .flat_map(|f| {
                    [(f.v[0], f.v[1]), (f.v[1], f.v[2]), (f.v[2], f.v[0])]
                        .map(|(a, b)| (a.min(b), a.max(b)))
                })
                .collect();
            edges.sort_unstable();
            edges.dedup();
            edges
                .into_iter()
                .map(|(a, b)| mesh.vertices[a].dist(&mesh.vertices[b]))
                .collect()
        }
    }
}

/// 1D Wasserstein distance between 64-bin histograms of the statistic,
/// binned over the combined range of both meshes and normalized to mass 1.
pub fn mesh_stat_distance(
    a: &IndexedMesh,
    b: &IndexedMesh,
    stat: MeshStat,
) -> Result<f64, MetricsError> {
    const BINS: usize = 64;
    let sa = stat_samples(a, stat);
    let sb = stat_samples(b, stat);
    if sa.is_empty() || sb.is_empty() {
        return Err(MetricsError::EmptyMesh(match stat {
            MeshStat::TriangleArea => "triangle",
            MeshStat::EdgeLength => "edge",
        }));
    }
    let lo = sa
        .iter()
        .chain(&sb)
        .fold(f64::INFINITY, |m, &v| m.min(v));
    let hi = sa
        .iter()
        .chain(&sb)
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if hi - lo <= 0.0 {
        return Ok(0.0);
    }
    let width = (hi - lo) / BINS as f64;
    let histogram = |samples: &[f64]| {
        let mut h = [0.0; BINS];
        for &v in samples {
            let k = (((v - lo) / width) as usize).min(BINS - 1);
            h[k] += 1.0 / samples.len() as f64;
        }
        h
    };
    let ha = histogram(&sa);
    let hb = histogram(&sb);
    let (mut cdf_a, mut cdf_b, mut dist) = (0.0, 0.0, 0.0);
    for k in 0..BINS {
        cdf_a += ha[k];
        cdf_b += hb[k];
        dist += (cdf_a - cdf_b).abs() * width;
    }
    Ok(dist)
}

/// All five metrics for one deformed room.
pub fn report(
    corr: &OutlineCorrespondence,
    src_mesh: &IndexedMesh,
    out_mesh: &IndexedMesh,
) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        area_change: area_change(&corr.src, &corr.tgt)?,
        outline_change: outline_change(corr)?,
        portal_change: portal_change(corr)?,
        mesh_a: mesh_stat_distance(src_mesh, out_mesh, MeshStat::TriangleArea)?,
        mesh_e: mesh_stat_distance(src_mesh, out_mesh, MeshStat::EdgeLength)?,
    })
}

/// Plan-level aggregation: unweighted mean over rooms.
pub fn aggregate(rooms: &[MetricsReport]) -> Option<MetricsReport> {
    if rooms.is_empty() {
        return None;
    }
    let n = rooms.len() as f64;
    Some(MetricsReport {
        area_change: rooms.iter().map(|r| r.area_change).sum::<f64>() / n,
        outline_change: rooms.iter().map(|r| r.outline_change).sum::<f64>() / n,
        portal_change: rooms.iter().map(|r| r.portal_change).sum::<f64>() / n,
        mesh_a: rooms.iter().map(|r| r.mesh_a).sum::<f64>() / n,
        mesh_e: rooms.iter().map(|r| r.mesh_e).sum::<f64>() / n,
    })
}

/// CSV table: one labeled row per report.
pub fn to_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("room,area_change,outline_change,portal_change,mesh_a,mesh_e\n");
    for (label, r) in rows {
        out.push_str(&format!(
            "{label},{},{},{},{},{}\n",
            r.area_change, r.outline_change, r.portal_change, r.mesh_a, r.mesh_e
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{
        correspond, deform_room, outline_to_meters, CorrespondenceWeights, Face, Point3,
    };
    use crate::geom::Rect;
    use crate::model::RoomType;
    use crate::synth::{rect_room, synth_room_mesh};

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
    fn area_change_examples() {
        let a = rect(10.0, 10.0);
        assert_eq!(area_change(&a, &a).unwrap(), 0.0);
        assert!((area_change(&a, &rect(10.0, 12.0)).unwrap() - 20.0).abs() < 1e-12);
        assert!((area_change(&a, &rect(10.0, 8.0)).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn outline_change_identity_and_translation() {
        let s = rect(10.0, 10.0);
        let w = CorrespondenceWeights { n_samples: 16, ..Default::default() };
        let corr = correspond(&s, &s, &[], &w).unwrap();
        assert!(outline_change(&corr).unwrap() < 1e-9);

        let moved = s.translated(&Point2::new(31.0, -7.0));
        let corr2 = correspond(&s, &moved, &[], &w).unwrap();
        assert!(outline_change(&corr2).unwrap() < 1e-9, "translation must not count");
    }

    #[test]
    fn outline_change_matches_hand_sum() {
        // hand-built correspondence on a square -> 2:1 rectangle with the
        // four corners as the only samples
        let s = rect(10.0, 10.0);
        let t = rect(20.0, 10.0);
        let corr = OutlineCorrespondence {
            src: s.clone(),
            tgt: t.clone(),
            u_s: vec![0.0, 0.25, 0.5, 0.75],
            u_t: vec![0.0, 1.0 / 3.0, 0.5, 5.0 / 6.0],
            sigma_s: vec![true; 4],
            sigma_t: vec![true; 4],
            theta: vec![false, true, false, true],
            portals: vec![],
            objective: 0.0,
        };
        // centroid shift (5,5) -> (10,5); every corner then differs by 5 in x
        let got = outline_change(&corr).unwrap();
        assert!((got - 5.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn mesh_stat_examples() {
        let mesh = synth_room_mesh(&rect(4.0, 3.0), 3.0, &[]);
        assert_eq!(
            mesh_stat_distance(&mesh, &mesh, MeshStat::TriangleArea).unwrap(),
            0.0
        );
        assert_eq!(
            mesh_stat_distance(&mesh, &mesh, MeshStat::EdgeLength).unwrap(),
            0.0
        );

        // two single-triangle meshes with areas 1 and 2: bins over [1,2],
        // all mass at the extremes -> 63/64 of the range
        let tri = |scale: f64| IndexedMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(2.0 * scale, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            faces: vec![Face { v: [0, 1, 2], group: 0 }],
            groups: vec!["floor.0".into()],
        };
        let d = mesh_stat_distance(&tri(1.0), &tri(2.0), MeshStat::TriangleArea).unwrap();
        assert!((d - 63.0 / 64.0).abs() < 1e-12, "got {d}");

        // symmetry
        let a = synth_room_mesh(&rect(4.0, 3.0), 3.0, &[]);
        let b = synth_room_mesh(&rect(6.0, 2.0), 2.5, &[]);
        let ab = mesh_stat_distance(&a, &b, MeshStat::EdgeLength).unwrap();
        let ba = mesh_stat_distance(&b, &a, MeshStat::EdgeLength).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn mesh_stat_close_to_empirical_wasserstein() {
        // the binned distance agrees with the exact sorted-sample
        // Wasserstein within one bin width
        let a = synth_room_mesh(&rect(4.0, 3.0), 3.0, &[]);
        let b = synth_room_mesh(&rect(5.0, 3.5), 3.0, &[]);
        let exact = {
            // equal sample counts here: mean |sorted_a - sorted_b|
            let mut sa: Vec<f64> = (0..a.faces.len()).map(|f| a.face_area(f)).collect();
            let mut sb: Vec<f64> = (0..b.faces.len()).map(|f| b.face_area(f)).collect();
            assert_eq!(sa.len(), sb.len());
            sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64
        };
        let binned = mesh_stat_distance(&a, &b, MeshStat::TriangleArea).unwrap();
        let lo = 0.0_f64;
        let hi: f64 = (0..a.faces.len())
            .map(|f| a.face_area(f))
            .chain((0..b.faces.len()).map(|f| b.face_area(f)))
            .fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / 64.0;
        assert!(
            (binned - exact).abs() <= width + 1e-12,
            "binned {binned} vs exact {exact} (bin width {width})"
        );
    }

    #[test]
    fn identity_pipeline_reports_all_zeros() {
        let room = rect_room("r", RoomType::Kitchen, 36.0, 36.0, &[0, 1]);
        let outline_m = outline_to_meters(&room.outline).unwrap();
        let mesh = synth_room_mesh(
            &outline_m,
            2.8,
            &[("sofa.0".to_string(), Rect::new(0.4, 0.4, 1.0, 0.6), 0.0, 0.8)],
        );
        let w = CorrespondenceWeights { n_samples: 32, ..Default::default() };
        let (out, corr) =
            deform_room(&room, &mesh, &room.outline, &room.portals, &w).unwrap();
        let r = report(&corr, &mesh, &out).unwrap();
        assert!(r.area_change.abs() < 1e-9, "{r:?}");
        assert!(r.outline_change.abs() < 1e-9, "{r:?}");
        assert!(r.portal_change.abs() < 1e-9, "{r:?}");
        assert!(r.mesh_a.abs() < 1e-9, "{r:?}");
        assert!(r.mesh_e.abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn aggregate_is_unweighted_mean() {
        let r1 = MetricsReport {
            area_change: 2.0,
            outline_change: 1.0,
            portal_change: 0.0,
            mesh_a: 0.5,
            mesh_e: 0.1,
        };
        let r2 = MetricsReport {
            area_change: 4.0,
            outline_change: 3.0,
            portal_change: 1.0,
            mesh_a: 1.5,
            mesh_e: 0.3,
        };
        let agg = aggregate(&[r1, r2]).unwrap();
        assert_eq!(agg.area_change, 3.0);
        assert_eq!(agg.outline_change, 2.0);
        assert_eq!(agg.portal_change, 0.5);
        assert_eq!(agg.mesh_a, 1.0);
        assert!((agg.mesh_e - 0.2).abs() < 1e-12);
        assert!(aggregate(&[]).is_none());

        let csv = to_csv(&[("r1".to_string(), r1)]);
        assert!(csv.starts_with("room,area_change"));
        assert!(csv.contains("r1,2,1,0,0.5,0.1"));
    }
}
