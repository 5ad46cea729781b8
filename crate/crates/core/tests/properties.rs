use std::sync::Arc;

use navloop::agent::{parse_lang_response, LangAction, LangDecision, OracleBackend};
use navloop::geometry::{backproject, cam_to_world, normalize_deg, project, Intrinsics, Point3, Pose, ViewDir};
use navloop::mapping::{CellState, OccupancyGrid};
use navloop::planner::{descent_cells, fmm_field, PlanGrid};
use navloop::runner::{run_episode, EpisodeConfig};
use navloop::scb::{record_waypoint, WaypointBuffer};
use navloop::tdm::{apply, parse_rendered, render_text, TodoItem, TodoList, TodoStatus, TodoUpdateOp};
use navloop::world::{generate_world, render_panorama, GeneratorSpec, GeodesicField, TaskFamily};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn status() -> impl Strategy<Value = TodoStatus> {
    prop_oneof![Just(TodoStatus::Pending), Just(TodoStatus::Completed)]
}

fn list() -> impl Strategy<Value = TodoList> {
    proptest::collection::vec(("[a-z ]{1,12}", any::<bool>(), "[a-z]{0,6}"), 0..6).prop_map(|rows| TodoList {
        items: rows
            .into_iter()
            .enumerate()
            .map(|(i, (content, done, result))| {
                let done = done && !result.is_empty();
                TodoItem {
                    content: format!("go{i} {content}"),
                    status: if done { TodoStatus::Completed } else { TodoStatus::Pending },
                    result: if done { result } else { String::new() },
                }
            })
            .collect(),
        revision: 0,
    })
}

fn op() -> impl Strategy<Value = TodoUpdateOp> {
    let idx = 0..8usize;
    prop_oneof![
        (idx.clone(), status(), "[a-z]{0,3}").prop_map(|(index, status, result)| TodoUpdateOp::Update { index, status, result }),
        (idx.clone(), "[a-z]{0,3}").prop_map(|(index, content)| TodoUpdateOp::Rewrite { index, content }),
        (proptest::option::of(idx.clone()), "[a-z]{0,3}").prop_map(|(index, content)| TodoUpdateOp::Add { content, index }),
        idx.prop_map(|index| TodoUpdateOp::Remove { index }),
    ]
}

fn decision() -> impl Strategy<Value = LangDecision> {
    let action = prop_oneof![
        prop_oneof![Just(ViewDir::Front), Just(ViewDir::Left), Just(ViewDir::Right), Just(ViewDir::Back)]
            .prop_map(|direction| LangAction::Turn { direction }),
        (0..20u64).prop_map(|waypoint_id| LangAction::Backtrack { waypoint_id }),
        (any::<bool>(), proptest::option::of("[a-z]{1,8}")).prop_map(|(stop, answer)| LangAction::DoubleCheck { stop, answer }),
    ];
    ("[a-zA-Z ,.]{0,30}", "[a-zA-Z ,.{}]{0,30}", proptest::collection::vec(op(), 0..3), "[a-zA-Z ,.]{0,30}", action).prop_map(
        |(progress_analysis, reasoning_todo, todo_ops, reasoning_action, action)| LangDecision {
            progress_analysis,
            reasoning_todo,
            todo_ops,
            reasoning_action,
            action,
        },
    )
}

proptest! {
    #[test]
    fn backproject_then_project_is_identity(u in 0.0..128.0f64, v in 0.0..96.0f64, d in 0.05..80.0f64) {
        let k = Intrinsics::from_hfov(90.0, 128, 96);
        let (pu, pv) = project(&backproject(u, v, d, &k).unwrap(), &k).unwrap();
        prop_assert!((pu - u).abs() <= 1e-9 && (pv - v).abs() <= 1e-9);
    }

    #[test]
    fn yaw_is_normalized(yaw in -1e6..1e6f64) {
        let n = normalize_deg(yaw);
        prop_assert!((0.0..360.0).contains(&n));
        prop_assert_eq!(normalize_deg(n), n);
        prop_assert_eq!(Pose::new(0.0, 0.0, 0.0, yaw, 0).unwrap().yaw, n);
    }

    #[test]
    fn camera_to_world_is_rigid(
        x in -10.0..10.0f64, y in -10.0..10.0f64, yaw in 0.0..360.0f64,
        p in (-5.0..5.0f64, -5.0..5.0f64, 0.0..5.0f64), off in 0..4usize,
    ) {
        let pose = Pose::new(x, y, 1.0, yaw, 0).unwrap();
        let cam = Point3::camera(p.0, p.1, p.2);
        let w = cam_to_world(&cam, &pose, 90.0 * off as f64).unwrap();
        let r = (p.0 * p.0 + p.1 * p.1 + p.2 * p.2).sqrt();
        prop_assert!((w.distance(&pose.position()).unwrap() - r).abs() <= 1e-9);
    }

    #[test]
    fn checklist_batches_keep_invariants(l in list(), ops in proptest::collection::vec(op(), 0..10)) {
        let (out, _) = apply(&l, &ops);
        prop_assert_eq!(out.revision, l.revision + 1);
        prop_assert!(out.items.iter().all(|it| it.status == TodoStatus::Pending || !it.result.trim().is_empty()));
        // Items present before and after keep their relative order.
        let mut last = None;
        for it in &l.items {
            if let Some(p) = out.items.iter().position(|o| o.content == it.content) {
                prop_assert!(last.is_none_or(|q| p > q));
                last = Some(p);
            }
        }
        prop_assert_eq!(parse_rendered(&render_text(&out)).unwrap(), out);
    }

    #[test]
    fn rendering_is_injective(a in list(), b in list()) {
        prop_assert_eq!(render_text(&a) == render_text(&b), a == b);
    }

    #[test]
    fn parse_ladder_is_monotone(d in decision(), preamble in "[a-zA-Z ]{0,20}") {
        let plain = d.to_json();
        let fenced = format!("{preamble}\n```json\n{plain}\n```\nthat is all");
        let a = parse_lang_response(&plain).unwrap();
        let b = parse_lang_response(&fenced).unwrap();
        prop_assert_eq!(a.rung, 1);
        prop_assert!(b.rung >= a.rung);
        prop_assert_eq!(&a.value, &d);
        prop_assert_eq!(b.value, a.value);
    }

    #[test]
    fn waypoint_buffer_evicts_oldest(cap in 1..10usize, n in 0..30usize) {
        let mut buf = WaypointBuffer::with_capacity(cap);
        let ids: Vec<u64> = (0..n)
            .map(|i| record_waypoint(&mut buf, Pose::planar(i as f64, 0.0, 0.0), &format!("p{i}"), "c"))
            .collect();
        prop_assert!(buf.len() <= cap);
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(buf.ids(), ids[n.saturating_sub(cap)..].to_vec());
    }

    #[test]
    fn fmm_field_is_consistent(seed in any::<u64>(), density in 0.0..0.35f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, res) = (20usize, 16usize, 0.1);
        let mut blocked: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let src = [rng.random_range(0..w as i64), rng.random_range(0..h as i64)];
        blocked[src[1] as usize * w + src[0] as usize] = false;
        let grid = PlanGrid::from_blocked(w, h, res, [0, 0], 0.0, blocked);
        let c = grid.center(src);
        let field = fmm_field(&grid, &Point3::world(c[0], c[1], 0.0)).unwrap();
        prop_assert_eq!(field.value(src), 0.0);
        for k in 0..grid.len() {
            let g = grid.global(k);
            let t = field.value(g);
            if !t.is_finite() {
                continue;
            }
            for nb in [[g[0] + 1, g[1]], [g[0], g[1] + 1]] {
                let tn = field.value(nb);
                if tn.is_finite() {
                    prop_assert!((t - tn).abs() <= res * (1.0 + 1e-9), "gradient {} at {g:?}", (t - tn).abs() / res);
                }
            }
            let cells = descent_cells(&field, g).unwrap();
            prop_assert!(cells.windows(2).all(|p| field.value(p[1]) < field.value(p[0])));
            prop_assert_eq!(*cells.last().unwrap(), src);
        }
    }
}

/// Noiseless panoramas never contradict the true map.
#[test]
fn mapping_is_sound_on_generated_worlds() {
    for seed in 0..50u64 {
        let mut spec = GeneratorSpec::for_family([TaskFamily::ObjectNav, TaskFamily::Vln, TaskFamily::Eqa][seed as usize % 3]);
        spec.floors = 1 + seed as usize % 2;
        let w = generate_world(900 + seed, &spec).unwrap();
        let mut map = OccupancyGrid::new_2d(w.resolution);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poses = vec![w.task.start];
        while poses.len() < 4 {
            let g = &w.floors()[0];
            let (i, j) = (rng.random_range(0..g.width as i64), rng.random_range(0..g.height as i64));
            if g.is_free(i, j) {
                let c = w.cell_center([i, j]);
                poses.push(Pose::new(c[0], c[1], 0.0, rng.random_range(0.0..360.0), 0).unwrap());
            }
        }
        for p in &poses {
            map.integrate_panorama(p, &render_panorama(&w, p).unwrap());
        }
        for floor in 0..w.floors().len() {
            let Some(layer) = map.layer(floor) else { continue };
            let g = &w.floors()[floor];
            for (c, s) in layer.known_cells() {
                match s {
                    CellState::Free => assert!(g.is_free(c[0], c[1]), "world {seed}: {c:?} mapped free"),
                    CellState::Occupied => assert!(!g.is_free(c[0], c[1]), "world {seed}: {c:?} mapped occupied"),
                    CellState::Unknown => {}
                }
            }
        }
    }
}

#[test]
fn summaries_agree_with_the_pose_sequence() {
    for (i, fam) in [TaskFamily::ObjectNav, TaskFamily::Vln, TaskFamily::Eqa].into_iter().enumerate() {
        let mut spec = GeneratorSpec::for_family(fam);
        spec.floors = 2;
        let w = generate_world(40 + i as u64, &spec).unwrap();
        let t = run_episode(&w, &OracleBackend::new(Arc::new(w.clone())), &EpisodeConfig::default()).unwrap();
        let poses = t.poses();
        let walked: f64 = poses.windows(2).map(|p| p[0].distance(&p[1])).sum();
        assert!((walked - t.final_summary.path_length).abs() <= 1e-6, "{walked} vs {}", t.final_summary.path_length);
        let field = GeodesicField::for_task(&w);
        let entered = poses.iter().any(|p| field.pose_distance(p) <= t.header.success_radius);
        assert_eq!(entered, t.final_summary.oracle_success);
    }
}
