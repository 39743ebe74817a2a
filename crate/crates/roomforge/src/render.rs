//! Static SVG rendering of floor plans: one filled polygon per room, one
//! thick segment per portal, colors keyed by room type.

use std::fmt::Write as _;

use crate::model::{FloorPlan, RoomType};

/// Fixed fill palette keyed by room type.
pub fn type_color(ty: RoomType) -> &'static str {
    match ty {
        RoomType::LivingRoom => "#f4d06f",
        RoomType::Bedroom => "#9dc3e6",
        RoomType::Kitchen => "#e8998d",
        RoomType::Bathroom => "#a9d9c3",
        RoomType::Balcony => "#cdb4db",
        RoomType::Storage => "#c9c9c9",
    }
}

fn fmt_n(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// Render a floor plan as a standalone SVG document. Output is
/// deterministic for a given plan.
pub fn render_svg(fp: &FloorPlan) -> String {
    const MARGIN: f64 = 8.0;
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pr in &fp.rooms {
        let (lo, hi) = pr.world_outline().bbox();
        min.0 = min.0.min(lo.x);
        min.1 = min.1.min(lo.y);
        max.0 = max.0.max(hi.x);
        max.1 = max.1.max(hi.y);
    }
    let (x0, y0, w, h) = if fp.rooms.is_empty() {
        (0.0, 0.0, 1.0, 1.0)
    } else {
        (
            min.0 - MARGIN,
            min.1 - MARGIN,
            max.0 - min.0 + 2.0 * MARGIN,
            max.1 - min.1 + 2.0 * MARGIN,
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">",
        fmt_n(x0),
        fmt_n(y0),
        fmt_n(w),
        fmt_n(h)
    );
    for pr in &fp.rooms {
        let pts: Vec<String> = pr
            .world_outline()
            .vertices()
            .iter()
            .map(|p| format!("{},{}", fmt_n(p.x), fmt_n(p.y)))
            .collect();
        let _ = writeln!(
            svg,
            "  <polygon points=\"{}\" fill=\"{}\" stroke=\"#333333\" stroke-width=\"0.5\"/>",
            pts.join(" "),
            type_color(pr.room.room_type)
        );
    }
    for (r, pr) in fp.rooms.iter().enumerate() {
        for p in 0..pr.room.portals.len() {
            if let Some((a, b)) = fp.portal_world_segment(r, p) {
                let _ = writeln!(
                    svg,
                    "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" \
                     stroke=\"#7a3b2e\" stroke-width=\"2\" stroke-linecap=\"butt\"/>",
                    fmt_n(a.x),
                    fmt_n(a.y),
                    fmt_n(b.x),
                    fmt_n(b.y)
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::model::PlacedRoom;
    use crate::synth::rect_room;

    #[test]
    fn svg_has_one_polygon_per_room_and_one_line_per_portal() {
        let a = rect_room("a", RoomType::Bedroom, 10.0, 10.0, &[1]);
        let b = rect_room("b", RoomType::Kitchen, 10.0, 10.0, &[3]);
        let fp = FloorPlan {
            rooms: vec![
                PlacedRoom { room: a, dx: 0.0, dy: 0.0 },
                PlacedRoom { room: b, dx: 10.0, dy: 0.0 },
            ],
            pairings: vec![((0, 0), (1, 0))],
            graph: None,
        };
        let svg = render_svg(&fp);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert_eq!(svg.matches("<line").count(), 2);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(type_color(RoomType::Bedroom)));
        assert!(svg.contains(type_color(RoomType::Kitchen)));
        // deterministic
        assert_eq!(svg, render_svg(&fp));
    }

    #[test]
    fn empty_plan_renders_valid_document() {
        let fp = FloorPlan { rooms: vec![], pairings: vec![], graph: None };
        let svg = render_svg(&fp);
        assert!(svg.contains("viewBox=\"0 0 1 1\""));
        assert_eq!(svg.matches("<polygon").count(), 0);
    }

    #[test]
    fn portal_segment_lies_on_wall() {
        let room = rect_room("r", RoomType::Storage, 12.0, 8.0, &[0]);
        let fp = FloorPlan {
            rooms: vec![PlacedRoom { room, dx: 3.0, dy: 4.0 }],
            pairings: vec![],
            graph: None,
        };
        let (a, b) = fp.portal_world_segment(0, 0).unwrap();
        assert!((a.y - 4.0).abs() < 1e-9 && (b.y - 4.0).abs() < 1e-9);
        assert!((b.x - a.x).abs() > 1.0);
        let mid = Point2::new((a.x + b.x) / 2.0, a.y);
        assert!((mid.x - 9.0).abs() < 1e-9);
    }
}
