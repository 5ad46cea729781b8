use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::agent::{OracleBackend, VisSelect};
use crate::world::{render_view, GroundWorldBuilder, TaskSpec};

fn room(start: Pose, goal: Point3) -> WorldModel {
    let mut b = GroundWorldBuilder::new(12.0, 12.0, 0.05, 1);
    b.outer_walls(0.1);
    b.block(0, 10.5, 5.5, 11.0, 6.5, "sofa");
    let task = TaskSpec {
        family: TaskFamily::ObjectNav,
        instruction: "find the sofa".into(),
        start,
        goal_positions: vec![goal],
        success_radius: 1.0,
        subgoal_radius: 1.0,
        ordered_subgoals: vec![],
        target_label: Some("sofa".into()),
        eqa_answer: None,
        goal_bearing: None,
    };
    b.build("room", task)
}

fn sofa_room() -> WorldModel {
    room(Pose::planar(7.0, 6.0, 0.0), Point3::world(10.0, 6.0, 0.0))
}

fn run(world: &WorldModel, cfg: &EpisodeConfig) -> EpisodeTrace {
    let backend = OracleBackend::new(Arc::new(world.clone()));
    run_episode(world, &backend, cfg).unwrap()
}

#[test]
fn oracle_reaches_goal_three_meters_ahead() {
    let w = sofa_room();
    let t = run(&w, &EpisodeConfig::default());
    let f = &t.final_summary;
    assert!(f.success, "{f:?}");
    assert!(f.stopped && f.oracle_success);
    assert!(f.decision_rounds <= 3, "{} rounds", f.decision_rounds);
    assert_eq!(f.termination, Termination::Stopped);
}

#[test]
fn without_checklist_no_todo_events() {
    let w = sofa_room();
    let cfg = EpisodeConfig {
        ablation: Ablation { tdm: false, scb: true },
        ..EpisodeConfig::default()
    };
    let t = run(&w, &cfg);
    assert!(t.final_summary.success);
    for e in &t.events {
        match e {
            TraceEvent::Init { .. } | TraceEvent::Todo { .. } => panic!("checklist event {e:?}"),
            TraceEvent::Lang { decision: Some(d), .. } => assert!(d.todo_ops.is_empty()),
            _ => {}
        }
    }
}

#[test]
fn checklist_update_precedes_dispatch() {
    let t = run(&sofa_room(), &EpisodeConfig::default());
    let mut lang_round = None;
    for e in &t.events {
        match e {
            TraceEvent::Lang { round, .. } => lang_round = Some(*round),
            TraceEvent::Todo { round, .. } => assert_eq!(Some(*round), lang_round),
            TraceEvent::Vis { round, .. } | TraceEvent::Verify { round, .. } => {
                let todo_seen = t.events.iter().any(|x| matches!(x, TraceEvent::Todo { round: r, .. } if r == round));
                assert!(todo_seen, "round {round} dispatched without a checklist update");
            }
            _ => {}
        }
    }
}

#[test]
fn trace_is_deterministic_and_round_trips() {
    let w = sofa_room();
    let a = run(&w, &EpisodeConfig::default());
    let b = run(&w, &EpisodeConfig::default());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let back = EpisodeTrace::from_jsonl(&a.to_jsonl()).unwrap();
    assert_eq!(back.to_jsonl(), a.to_jsonl());
    assert_eq!(a.file_name(), "room_0.trace.jsonl");
}

#[test]
fn path_length_matches_poses() {
    let w = room(Pose::planar(2.0, 2.0, 90.0), Point3::world(10.0, 6.0, 0.0));
    let t = run(&w, &EpisodeConfig::default());
    let poses = t.poses();
    let sum: f64 = poses.windows(2).map(|p| p[0].distance(&p[1])).sum();
    assert!((sum - t.final_summary.path_length).abs() < 1e-9);
    assert!(t.final_summary.success, "{:?}", t.final_summary);
}

#[test]
fn unreachable_distance_survives_round_trip() {
    let mut t = run(&sofa_room(), &EpisodeConfig::default());
    t.final_summary.distance_to_goal = f64::INFINITY;
    let back = EpisodeTrace::from_jsonl(&t.to_jsonl()).unwrap();
    assert_eq!(back.final_summary.distance_to_goal, f64::INFINITY);
}

#[test]
fn resolve_wall_two_meters_ahead() {
    let w = room(Pose::planar(9.9, 3.0, 0.0), Point3::world(10.0, 6.0, 0.0));
    let pose = Pose::planar(9.9, 3.0, 0.0);
    let view = render_view(&w, &pose, ViewDir::Front).unwrap();
    let vis = VisDecision {
        select: VisSelect::BBox {
            u_min: 62,
            v_min: 40,
            u_max: 66,
            v_max: 56,
        },
        target_desc: "wall".into(),
    };
    let p = resolve_target_point(&vis, &view, &pose).unwrap();
    let expect_x = 11.9;
    assert!((p.x - expect_x).abs() < 0.06, "{p:?}");
    assert!((p.y - 3.0).abs() < 0.05, "{p:?}");
}

#[test]
fn resolve_spirals_to_valid_neighbor() {
    let w = sofa_room();
    let pose = Pose::planar(7.0, 6.0, 0.0);
    let mut view = render_view(&w, &pose, ViewDir::Front).unwrap();
    for u in 60..64 {
        view.depth_cols[u] = f64::INFINITY;
    }
    let point = |u, v| VisDecision {
        select: VisSelect::Point { u, v },
        target_desc: String::new(),
    };
    assert!(matches!(resolve_target_point(&point(61, 48), &view, &pose), Err(RunnerError::GroundingDepthFailure)));
    let boxed = VisDecision {
        select: VisSelect::BBox {
            u_min: 60,
            v_min: 40,
            u_max: 64,
            v_max: 56,
        },
        target_desc: String::new(),
    };
    let got = resolve_target_point(&boxed, &view, &pose).unwrap();
    let want = resolve_target_point(&point(64, 48), &view, &pose).unwrap();
    assert_eq!(got, want);
    // Rows outside the return band carry no depth either.
    assert!(matches!(resolve_target_point(&point(20, 2), &view, &pose), Err(RunnerError::GroundingDepthFailure)));
}

struct Garbage(AtomicUsize);

impl DecisionBackend for Garbage {
    fn decide_lang(&self, _: &PromptPayload, _: &DecisionContext) -> Result<String, BackendError> {
        self.0.fetch_add(1, Ordering::Relaxed);
        Ok("I am not sure.".into())
    }

    fn decide_vis(&self, _: &PromptPayload, _: &DecisionContext) -> Result<String, BackendError> {
        Ok("nothing".into())
    }

    fn name(&self) -> String {
        "garbage".into()
    }
}

#[test]
fn unparseable_backend_hits_round_cap() {
    let w = sofa_room();
    let b = Garbage(AtomicUsize::new(0));
    let cfg = EpisodeConfig {
        lang_calls_cap: 7,
        ..EpisodeConfig::default()
    };
    let t = run_episode(&w, &b, &cfg).unwrap();
    assert_eq!(t.final_summary.termination, Termination::LangCallCap);
    assert_eq!(t.final_summary.decision_rounds, 7);
    assert!(!t.final_summary.stopped);
    // one init call plus one attempt and two retries per round
    assert_eq!(b.0.load(Ordering::Relaxed), 3 + 7 * 3);
}

struct Down;

impl DecisionBackend for Down {
    fn decide_lang(&self, _: &PromptPayload, _: &DecisionContext) -> Result<String, BackendError> {
        Err(BackendError::Timeout)
    }

    fn decide_vis(&self, _: &PromptPayload, _: &DecisionContext) -> Result<String, BackendError> {
        Err(BackendError::Timeout)
    }

    fn name(&self) -> String {
        "down".into()
    }
}

#[test]
fn backend_failure_is_recorded() {
    let w = sofa_room();
    for tdm in [true, false] {
        let cfg = EpisodeConfig {
            ablation: Ablation { tdm, scb: true },
            ..EpisodeConfig::default()
        };
        let t = run_episode(&w, &Down, &cfg).unwrap();
        assert_eq!(t.final_summary.termination, Termination::BackendError);
        assert!(t.final_summary.failure_reason.is_some());
        assert!(!t.final_summary.success);
    }
}

#[test]
fn invalid_config_rejected() {
    let cfg = EpisodeConfig {
        max_steps: 0,
        ..EpisodeConfig::default()
    };
    assert!(matches!(run_episode(&sofa_room(), &Down, &cfg), Err(RunnerError::InvalidConfig(_))));
}

#[test]
fn ablation_flags() {
    assert_eq!(Ablation::from_flag("tdm"), Some(Ablation { tdm: false, scb: true }));
    assert_eq!(Ablation::from_flag("none"), Some(Ablation { tdm: true, scb: true }));
    assert_eq!(Ablation::from_flag("scb"), Some(Ablation { tdm: true, scb: false }));
    assert_eq!(Ablation::from_flag("x"), None);
}
