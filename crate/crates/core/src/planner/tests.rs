use std::collections::BinaryHeap;

use super::*;
use crate::mapping::{CellState, OccupancyGrid};
use crate::world::render_view;

/// 8-connected Dijkstra with unit/sqrt(2) step costs; diagonals need both
/// side cells free.
fn dijkstra(grid: &PlanGrid, src: [i64; 2]) -> Vec<f64> {
    let n = grid.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    let s = grid.local(src).unwrap();
    dist[s] = 0.0;
    heap.push((std::cmp::Reverse(0u64), s));
    while let Some((std::cmp::Reverse(dk), k)) = heap.pop() {
        let d = f64::from_bits(dk);
        if d > dist[k] {
            continue;
        }
        let g = grid.global(k);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let nb = [g[0] + di, g[1] + dj];
            if grid.is_blocked(nb) {
                continue;
            }
            if di != 0 && dj != 0 && (grid.is_blocked([g[0] + di, g[1]]) || grid.is_blocked([g[0], g[1] + dj])) {
                continue;
            }
            let step = if di != 0 && dj != 0 { std::f64::consts::SQRT_2 } else { 1.0 } * grid.resolution;
            let nk = grid.local(nb).unwrap();
            if d + step < dist[nk] {
                dist[nk] = d + step;
                heap.push((std::cmp::Reverse((d + step).to_bits()), nk));
            }
        }
    }
    dist
}

#[test]
fn wall_with_gap_matches_dijkstra_within_a_diagonal() {
    let mut g = PlanGrid::new(5, 5, 1.0, [0, 0], 0.0);
    for j in 0..5 {
        if j != 2 {
            g.set_blocked([2, j], true);
        }
    }
    let field = fmm_field(&g, &Point3::world(0.5, 0.5, 0.0)).unwrap();
    let oracle = dijkstra(&g, [0, 0]);
    for k in 0..g.len() {
        let (a, b) = (field.values[k], oracle[k]);
        if b.is_infinite() {
            assert!(a.is_infinite());
        } else {
            assert!((a - b).abs() <= std::f64::consts::SQRT_2 + 1e-9, "cell {k}: fmm {a} dijkstra {b}");
        }
    }
}

fn belief_box(w: i64, h: i64) -> OccupancyGrid {
    let mut m = OccupancyGrid::new_2d(0.05);
    for j in 0..h {
        for i in 0..w {
            let edge = i == 0 || j == 0 || i == w - 1 || j == h - 1;
            m.set_2d(0, [i, j], if edge { CellState::Occupied } else { CellState::Free });
        }
    }
    m
}

#[test]
fn plan_to_self_is_motionless() {
    let m = belief_box(60, 60);
    let start = Pose::planar(1.5, 1.5, 0.0);
    let p = plan_to(&m, &start, &start.position()).unwrap();
    assert_eq!(p.length, 0.0);
}

#[test]
fn occupied_target_retargets_next_to_obstacle() {
    let mut m = belief_box(100, 100);
    // sofa block at cells 60..70 x 40..50
    for j in 40..50 {
        for i in 60..70 {
            m.set_2d(0, [i, j], CellState::Occupied);
        }
    }
    let start = Pose::planar(1.0, 2.25, 0.0);
    let target = Point3::world(3.1, 2.25, 0.0);
    let p = plan_to(&m, &start, &target).unwrap();
    let end = p.end().unwrap();
    // nearest traversable cell: the first cell outside the inflated block
    // edge (x = 3.0 - 0.2), center at 2.775
    assert!((end.x - 2.775).abs() < 1e-9, "end {end:?}");
    assert!((end.y - 2.225).abs() < 0.051, "end {end:?}");
    assert!(end.planar_distance(&target).unwrap() <= RETARGET_RADIUS_M);
}

#[test]
fn sealed_target_is_unreachable() {
    let mut m = belief_box(120, 60);
    for j in 0..60 {
        m.set_2d(0, [60, j], CellState::Occupied);
    }
    let start = Pose::planar(1.0, 1.5, 0.0);
    assert_eq!(plan_to(&m, &start, &Point3::world(5.0, 1.5, 0.0)), Err(PlanError::Unreachable));
}

#[test]
fn plan_is_deterministic_and_collision_free() {
    let mut m = belief_box(120, 120);
    for j in 0..80 {
        m.set_2d(0, [60, j], CellState::Occupied);
    }
    let start = Pose::planar(1.0, 1.0, 0.0);
    let goal = Point3::world(5.0, 1.0, 0.0);
    let a = plan_to(&m, &start, &goal).unwrap();
    let b = plan_to(&m, &start, &goal).unwrap();
    assert_eq!(a, b);
    for w in a.waypoints.windows(2) {
        let n = (w[0].distance_unchecked(&w[1]) / 0.01).ceil() as usize;
        for s in 0..=n {
            let t = s as f64 / n.max(1) as f64;
            let (x, y) = (w[0].x + (w[1].x - w[0].x) * t, w[0].y + (w[1].y - w[0].y) * t);
            let c = [(x / 0.05).floor() as i64, (y / 0.05).floor() as i64];
            assert_ne!(m.state_2d(0, c), CellState::Occupied);
        }
    }
    assert!(a.length > 7.0, "detour around the wall: {}", a.length);
}

#[test]
fn empty_space_3d_path_is_direct() {
    let g = VoxelPlanGrid::new([0, 0, 0], [20, 20, 20], 1.0);
    let (s, e) = (Point3::world(1.5, 1.5, 5.5), Point3::world(15.5, 12.5, 9.5));
    let p = plan_3d_on(&g, &s, &e).unwrap();
    assert_eq!(p.waypoints.len(), 2);
    assert!((p.length - s.distance_unchecked(&e)).abs() < 1e-12);
}

#[test]
fn box_obstacle_is_circumvented() {
    let mut g = VoxelPlanGrid::new([0, 0, 0], [30, 30, 20], 1.0);
    for k in 0..12 {
        for j in 10..20 {
            for i in 12..16 {
                g.set_blocked([i, j, k], true);
            }
        }
    }
    let s = Point3::world(5.5, 15.5, 5.5);
    let e = Point3::world(25.5, 15.5, 5.5);
    let p = plan_3d_on(&g, &s, &e).unwrap();
    assert!(p.length > 20.0);
    for w in p.waypoints.windows(2) {
        assert!(segment_clear(&g, &w[0], &w[1]));
    }
    let inside = Point3::world(13.5, 15.5, 5.5);
    assert_eq!(plan_3d_on(&g, &s, &inside), Err(PlanError::Unreachable));
}

fn front_with_wall(dist: f64) -> crate::world::View {
    let mut b = crate::world::GroundWorldBuilder::new(20.0, 20.0, 0.05, 1);
    b.block(0, 10.0 + dist, 0.0, 10.5 + dist, 20.0, "wall");
    let pose = Pose::planar(10.0, 10.0, 0.0);
    let task = crate::world::TaskSpec {
        family: crate::world::TaskFamily::AerialVLN,
        instruction: String::new(),
        start: pose,
        goal_positions: vec![Point3::world(1.0, 1.0, 0.0)],
        success_radius: 5.0,
        subgoal_radius: 1.0,
        ordered_subgoals: vec![],
        target_label: None,
        eqa_answer: None,
        goal_bearing: None,
    };
    render_view(&b.build("w", task), &pose, crate::geometry::ViewDir::Front).unwrap()
}

#[test]
fn direction_constrained_examples() {
    let start = Pose::new(0.0, 0.0, 10.0, 90.0, 0).unwrap();
    let here = Pose::new(3.0, 4.0, 10.0, 0.0, 0).unwrap();
    let open = front_with_wall(100.0);
    // goal straight along the start heading, which faces +y
    let wp = direction_constrained_waypoint(&start, &here, [1.0, 0.0, 0.0], &open).unwrap();
    assert!((wp.x - 3.0).abs() < 1e-12 && (wp.y - 9.0).abs() < 1e-12 && wp.z == 10.0);
    let wall4 = front_with_wall(4.0);
    let wp = direction_constrained_waypoint(&start, &here, [1.0, 0.0, 0.0], &wall4).unwrap();
    assert!((wp.planar_distance(&here.position()).unwrap() - 2.0).abs() < 0.03);
    let wall08 = front_with_wall(0.8);
    assert_eq!(
        direction_constrained_waypoint(&start, &here, [1.0, 0.0, 0.0], &wall08),
        Err(PlanError::BlockedAhead)
    );
    let low = Pose::new(0.0, 0.0, 2.5, 0.0, 0).unwrap();
    let wp = direction_constrained_waypoint(&start, &low, [0.0, 0.0, -1.0], &open).unwrap();
    assert_eq!(wp.z, AERIAL_CORRIDOR.0);
}
