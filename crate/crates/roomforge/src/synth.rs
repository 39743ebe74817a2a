//! Seeded synthetic fixtures: room databases and relation graphs sized for
//! tests and benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{Face, IndexedMesh, Point3};
use crate::geom::{decompose_maximal, Point2, Rect, RectPolygon};
use crate::model::{Facing, GraphNode, Portal, RelationGraph, Room, RoomDatabase, RoomType};

pub const ALL_TYPES: [RoomType; 6] = [
    RoomType::Bedroom,
    RoomType::Kitchen,
    RoomType::LivingRoom,
    RoomType::Bathroom,
    RoomType::Storage,
    RoomType::Balcony,
];

/// A w x h rectangular room with `portal_walls.len()` portals, each an
/// 8-unit opening centered on the given wall (0 top, 1 right, 2 bottom,
/// 3 left).
pub fn rect_room(
    id: &str,
    room_type: RoomType,
    w: f64,
    h: f64,
    portal_walls: &[usize],
) -> Room {
    let outline = RectPolygon::new(vec![
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ])
    .unwrap();
    let per = 2.0 * (w + h);
    let starts = [0.0, w / per, (w + h) / per, (2.0 * w + h) / per];
    let ends = [w / per, (w + h) / per, (2.0 * w + h) / per, 1.0];
    let facings = [Facing::Up, Facing::Right, Facing::Down, Facing::Left];
    let portals = portal_walls
        .iter()
        .map(|&k| Portal {
            mid: (starts[k] + ends[k]) / 2.0,
            len: 8.0 / per,
            facing: facings[k],
            wall: k,
            pair_hint: None,
        })
        .collect();
    Room {
        id: id.into(),
        room_type,
        outline,
        portals,
        mesh_ref: None,
        rotation: 0,
    }
}

/// Seeded database covering every (type, portal count) combination up to 4
/// portals, then extra size variants until `n_rooms` rooms exist.
pub fn synth_db(seed: u64, n_rooms: usize) -> RoomDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rooms = Vec::new();
    let mut combo = 0usize;
    while rooms.len() < n_rooms {
        let ty = ALL_TYPES[combo % 6];
        let count = 1 + (combo / 6) % 4;
        combo += 1;
        let w = 28.0 + 4.0 * rng.gen_range(0..6) as f64;
        let h = 28.0 + 4.0 * rng.gen_range(0..6) as f64;
        let walls: Vec<usize> = (0..count).collect();
        rooms.push(rect_room(
            &format!("syn{:03}", rooms.len()),
            ty,
            w,
            h,
            &walls,
        ));
    }
    RoomDatabase::new(rooms).expect("synthetic rooms are well-formed")
}

/// Seeded random tree with degrees capped at 4 and cycled room types.
pub fn synth_graph(seed: u64, n: usize) -> RelationGraph {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15));
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = loop {
            let j = rng.gen_range(0..i);
            if degree[j] < 4 {
                break j;
            }
        };
        degree[parent] += 1;
        degree[i] += 1;
        edges.push((format!("n{parent}"), format!("n{i}")));
    }
    let nodes = (0..n)
        .map(|i| GraphNode {
            id: format!("n{i}"),
            room_type: ALL_TYPES[rng.gen_range(0..6)],
        })
        .collect();
    let g = RelationGraph { nodes, edges };
    g.check().expect("synthetic graph is connected");
    g
}

/// Labeled room mesh: gridded floor and ceiling slabs, one wall quad per
/// outline edge, plus axis-aligned boxes for each `(label, footprint,
/// z_low, z_high)` object entry. Coordinates share the outline's frame.
pub fn synth_room_mesh(
    outline: &RectPolygon,
    height: f64,
    objects: &[(String, Rect, f64, f64)],
) -> IndexedMesh {
    let mut mesh = IndexedMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        groups: Vec::new(),
    };
    let group = |mesh: &mut IndexedMesh, name: &str| -> usize {
        if let Some(i) = mesh.groups.iter().position(|g| g == name) {
            i
        } else {
            mesh.groups.push(name.to_string());
            mesh.groups.len() - 1
        }
    };
    let quad = |mesh: &mut IndexedMesh, g: usize, pts: [Point3; 4]| {
        let base = mesh.vertices.len();
        mesh.vertices.extend_from_slice(&pts);
        mesh.faces.push(Face { v: [base, base + 1, base + 2], group: g });
        mesh.faces.push(Face { v: [base, base + 2, base + 3], group: g });
    };
    let cells = decompose_maximal(outline);
    for z_name in [(0.0, "floor.0"), (height, "ceiling.0")] {
        let g = group(&mut mesh, z_name.1);
        let z = z_name.0;
        for c in &cells {
            quad(
                &mut mesh,
                g,
                [
                    Point3::new(c.x, c.y, z),
                    Point3::new(c.x + c.w, c.y, z),
                    Point3::new(c.x + c.w, c.y + c.h, z),
                    Point3::new(c.x, c.y + c.h, z),
                ],
            );
        }
    }
    for (i, (a, b)) in outline.edges().enumerate() {
        let g = group(&mut mesh, &format!("wall.{i}"));
        quad(
            &mut mesh,
            g,
            [
                Point3::new(a.x, a.y, 0.0),
                Point3::new(b.x, b.y, 0.0),
                Point3::new(b.x, b.y, height),
                Point3::new(a.x, a.y, height),
            ],
        );
    }
    for (label, r, zlo, zhi) in objects {
        let g = group(&mut mesh, label);
        let (x0, y0, x1, y1) = (r.x, r.y, r.x + r.w, r.y + r.h);
        // bottom, top
        quad(&mut mesh, g, [
            Point3::new(x0, y0, *zlo),
            Point3::new(x1, y0, *zlo),
            Point3::new(x1, y1, *zlo),
            Point3::new(x0, y1, *zlo),
        ]);
        quad(&mut mesh, g, [
            Point3::new(x0, y0, *zhi),
            Point3::new(x1, y0, *zhi),
            Point3::new(x1, y1, *zhi),
            Point3::new(x0, y1, *zhi),
        ]);
        // four sides
        let sides = [
            [(x0, y0), (x1, y0)],
            [(x1, y0), (x1, y1)],
            [(x1, y1), (x0, y1)],
            [(x0, y1), (x0, y0)],
        ];
        for [p, q] in sides {
            quad(&mut mesh, g, [
                Point3::new(p.0, p.1, *zlo),
                Point3::new(q.0, q.1, *zlo),
                Point3::new(q.0, q.1, *zhi),
                Point3::new(p.0, p.1, *zhi),
            ]);
        }
    }
    mesh
}
