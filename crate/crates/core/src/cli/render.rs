//! Plan-view SVG of one episode.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::CliError;
use crate::geometry::Pose;
use crate::runner::{EpisodeTrace, TraceEvent};
use crate::world::{Layout, WorldModel};

/// Pixels per meter.
const SCALE: f64 = 40.0;
const MARGIN: f64 = 10.0;

/// Maximal horizontal runs of occupied cells, `(j, i0, i1)` inclusive.
fn wall_runs(nx: usize, ny: usize, occupied: impl Fn(i64, i64) -> bool) -> Vec<(i64, i64, i64)> {
    let mut runs = vec![];
    for j in 0..ny as i64 {
        let mut i = 0;
        while i < nx as i64 {
            if occupied(i, j) {
                let start = i;
                while i + 1 < nx as i64 && occupied(i + 1, j) {
                    i += 1;
                }
                runs.push((j, start, i));
            }
            i += 1;
        }
    }
    runs
}

struct Panel {
    floor: usize,
    runs: Vec<(i64, i64, i64)>,
}

/// Renders walls, the executed path, waypoints, backtrack arcs and a goal ring
/// per goal. Floors are laid out left to right. Output depends only on the
/// inputs.
pub fn render_svg(trace: &EpisodeTrace, world: &WorldModel) -> Result<String, CliError> {
    if trace.header.world != world.name || trace.header.world_fingerprint != world.fingerprint() {
        return Err(CliError::SchemaMismatch(format!(
            "trace {} ({}) does not belong to world {}",
            trace.header.world, trace.header.world_fingerprint, world.name
        )));
    }
    let res = world.resolution;
    let (nx, ny, panels) = match &world.layout {
        Layout::Ground2d { floors, .. } => {
            let nx = floors.iter().map(|g| g.width).max().unwrap_or(0);
            let ny = floors.iter().map(|g| g.height).max().unwrap_or(0);
            let panels = floors
                .iter()
                .enumerate()
                .map(|(floor, g)| Panel {
                    floor,
                    runs: wall_runs(g.width, g.height, |i, j| g.is_occupied(i, j)),
                })
                .collect::<Vec<_>>();
            (nx, ny, panels)
        }
        Layout::Aerial3d { voxels } => {
            let runs = wall_runs(voxels.nx, voxels.ny, |i, j| (0..voxels.nz as i64).any(|k| voxels.is_occupied([i, j, k])));
            (voxels.nx, voxels.ny, vec![Panel { floor: 0, runs }])
        }
    };
    let pw = nx as f64 * res * SCALE;
    let ph = ny as f64 * res * SCALE;
    let width = panels.len() as f64 * (pw + MARGIN) + MARGIN;
    let height = ph + 2.0 * MARGIN;
    // World y points up, SVG y points down.
    let tx = |floor: usize, x: f64| MARGIN + floor as f64 * (pw + MARGIN) + x * SCALE;
    let ty = |y: f64| MARGIN + ph - y * SCALE;
    let panel_of = |p: &Pose| p.floor.min(panels.len().saturating_sub(1));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for p in &panels {
        let _ = writeln!(s, r#"<g class="floor" data-floor="{}">"#, p.floor);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#bbbbbb"/>"##,
            tx(p.floor, 0.0),
            ty(ny as f64 * res)
        );
        for &(j, i0, i1) in &p.runs {
            let _ = writeln!(
                s,
                r##"<rect class="wall" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#444444"/>"##,
                tx(p.floor, i0 as f64 * res),
                ty((j + 1) as f64 * res),
                (i1 - i0 + 1) as f64 * res * SCALE,
                res * SCALE
            );
        }
        let _ = writeln!(s, "</g>");
    }

    let r = trace.header.success_radius;
    for g in &world.task.goal_positions {
        let f = world.floor_of(g).min(panels.len().saturating_sub(1));
        let _ = writeln!(
            s,
            r##"<circle class="goal" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#2ca02c" fill-opacity="0.15" stroke="#2ca02c"/>"##,
            tx(f, g.x),
            ty(g.y),
            r * SCALE
        );
    }

    // One polyline per stretch on a single floor.
    let poses = trace.poses();
    let mut stretches: Vec<Vec<&Pose>> = vec![];
    for p in &poses {
        match stretches.last_mut() {
            Some(cur) if cur.last().is_some_and(|q| q.floor == p.floor) => cur.push(p),
            _ => stretches.push(vec![p]),
        }
    }
    for st in &stretches {
        let pts: Vec<String> = st.iter().map(|p| format!("{:.2},{:.2}", tx(panel_of(p), p.x), ty(p.y))).collect();
        let _ = writeln!(
            s,
            r##"<polyline class="path" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            pts.join(" ")
        );
    }

    let mut waypoints: BTreeMap<u64, Pose> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Waypoint { id, pose, .. } = e {
            waypoints.insert(*id, *pose);
            let _ = writeln!(
                s,
                r##"<circle class="waypoint" data-id="{id}" cx="{:.2}" cy="{:.2}" r="3" fill="#ff7f0e"/>"##,
                tx(panel_of(pose), pose.x),
                ty(pose.y)
            );
        }
    }
    for e in &trace.events {
        if let TraceEvent::Backtrack { waypoint_id, from, .. } = e {
            let Some(to) = waypoints.get(waypoint_id) else {
                continue;
            };
            let (x0, y0) = (tx(panel_of(from), from.x), ty(from.y));
            let (x1, y1) = (tx(panel_of(to), to.x), ty(to.y));
            // Bow the arc to the left of the direction of travel.
            let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let (dx, dy) = (x1 - x0, y1 - y0);
            let (cx, cy) = (mx + 0.3 * dy, my - 0.3 * dx);
            let _ = writeln!(
                s,
                r##"<path class="backtrack" data-waypoint="{waypoint_id}" d="M {x0:.2} {y0:.2} Q {cx:.2} {cy:.2} {x1:.2} {y1:.2}" fill="none" stroke="#d62728" stroke-dasharray="6 3"/>"##
            );
        }
    }

    let start = &trace.header.start;
    let _ = writeln!(
        s,
        r##"<circle class="start" cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##,
        tx(panel_of(start), start.x),
        ty(start.y)
    );
    let end = &trace.final_summary.final_pose;
    let _ = writeln!(
        s,
        r##"<rect class="end" x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/>"##,
        tx(panel_of(end), end.x) - 4.0,
        ty(end.y) - 4.0,
        if trace.final_summary.success { "#2ca02c" } else { "#d62728" }
    );
    s.push_str("</svg>\n");
    Ok(s)
}
