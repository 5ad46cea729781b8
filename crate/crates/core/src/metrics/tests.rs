use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::agent::OracleBackend;
use crate::geometry::Pose;
use crate::runner::{run_episode, EpisodeConfig};
use crate::world::{GroundWorldBuilder, Subgoal, TaskSpec};

fn p(x: f64, y: f64) -> Point3 {
    Point3::world(x, y, 0.0)
}

/// Plain recursive DTW over all monotone alignments.
fn dtw_reference(a: &[Point3], b: &[Point3]) -> f64 {
    fn go(a: &[Point3], b: &[Point3], i: usize, j: usize) -> f64 {
        let d = a[i].distance_unchecked(&b[j]);
        if i == 0 && j == 0 {
            return d;
        }
        let mut best = f64::INFINITY;
        if i > 0 {
            best = best.min(go(a, b, i - 1, j));
        }
        if j > 0 {
            best = best.min(go(a, b, i, j - 1));
        }
        if i > 0 && j > 0 {
            best = best.min(go(a, b, i - 1, j - 1));
        }
        d + best
    }
    go(a, b, a.len() - 1, b.len() - 1)
}

#[test]
fn spl_values() {
    assert_eq!(spl(true, 7.5, 7.5), 1.0);
    assert!((spl(true, 7.5, 15.0) - 0.5).abs() <= 1e-12);
    assert_eq!(spl(false, 7.5, 7.5), 0.0);
    // Shorter than the geodesic length can only come from discretization.
    assert_eq!(spl(true, 7.5, 7.0), 1.0);
}

#[test]
fn success_within_radius() {
    assert!(is_success(true, 2.9, 3.0));
    assert!(!is_success(false, 2.9, 3.0));
    assert!(!is_success(true, 3.1, 3.0));
}

#[test]
fn ndtw_identity_and_hand_value() {
    let path = vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 2.0), p(3.0, 2.5)];
    assert!((ndtw(&path, &path, 3.0) - 1.0).abs() <= 1e-12);
    // Parallel offset by one meter: two unit costs over two reference points.
    let q = [p(0.0, 0.0), p(1.0, 0.0)];
    let r = [p(0.0, 1.0), p(1.0, 1.0)];
    assert!((ndtw(&q, &r, 1.0) - (-1.0f64).exp()).abs() <= 1e-12);
}

#[test]
fn ndtw_ignores_repeated_reference_points() {
    let q = [p(0.0, 0.0), p(0.5, 0.3), p(2.0, 0.0)];
    let r = [p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)];
    let r2 = [p(0.0, 0.0), p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)];
    assert_eq!(ndtw(&q, &r, 3.0), ndtw(&q, &r2, 3.0));
}

#[test]
fn resample_spacing() {
    let r = resample(&[p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.6)], 0.25);
    assert_eq!(r.len(), 1 + 4 + 3);
    assert_eq!(r[4], p(1.0, 0.0));
    assert!(r.windows(2).all(|w| w[0].distance_unchecked(&w[1]) <= 0.25 + 1e-12));
}

fn vln_room(subgoals: Vec<Subgoal>) -> WorldModel {
    let mut b = GroundWorldBuilder::new(12.0, 12.0, 0.05, 1);
    b.outer_walls(0.1);
    b.block(0, 6.0, 0.0, 6.3, 8.0, "wall");
    let goal = subgoals.last().map_or(p(10.0, 2.0), |s| s.position);
    let task = TaskSpec {
        family: TaskFamily::Vln,
        instruction: "go around the partition".into(),
        start: Pose::planar(2.0, 2.0, 90.0),
        goal_positions: vec![goal],
        success_radius: 1.0,
        subgoal_radius: 1.0,
        ordered_subgoals: subgoals,
        target_label: None,
        eqa_answer: None,
        goal_bearing: None,
    };
    b.build("partition", task)
}

fn two_landmarks() -> Vec<Subgoal> {
    vec![
        Subgoal {
            description: "pass the end of the partition".into(),
            position: p(6.15, 9.5),
        },
        Subgoal {
            description: "stop in the far corner".into(),
            position: p(10.0, 2.0),
        },
    ]
}

#[test]
fn vln_without_reference_is_an_error() {
    assert_eq!(reference_path(&vln_room(vec![])), Err(MetricsError::MissingReference));
}

#[test]
fn oracle_run_metrics_are_consistent() {
    let w = vln_room(two_landmarks());
    let b = OracleBackend::new(Arc::new(w.clone()));
    let t = run_episode(&w, &b, &EpisodeConfig::default()).unwrap();
    let m = compute_metrics(&t, &w).unwrap();
    assert!(m.sr && m.osr, "{m:?}");
    assert!((m.path_length - t.final_summary.path_length).abs() < 1e-9);
    assert!(m.spl > 0.0 && m.spl <= 1.0);
    assert!((m.spl - m.shortest_length / m.path_length.max(m.shortest_length)).abs() <= 1e-12);
    let nd = m.ndtw.unwrap();
    assert!(nd > 0.0 && nd <= 1.0);
    assert_eq!(m.acc, None);

    let mut other = w.clone();
    other.name = "elsewhere".into();
    assert!(matches!(compute_metrics(&t, &other), Err(MetricsError::SchemaMismatch(_))));
}

#[test]
fn dtw_matches_recursive_definition() {
    let a = [p(0.0, 0.0), p(1.0, 0.5), p(2.0, 0.0), p(2.5, 1.0)];
    let b = [p(0.0, 0.2), p(2.0, 0.1), p(3.0, 1.0)];
    assert!((dtw(&a, &b) - dtw_reference(&a, &b)).abs() <= 1e-12);
}

fn state(success: bool, oracle: bool, ne: f64, path: f64, shortest: f64, answer: Option<bool>) -> FinalState {
    FinalState {
        success,
        oracle_success: oracle,
        distance_to_goal: ne,
        path_length: path,
        shortest_length: shortest,
        answer_correct: answer,
    }
}

#[test]
fn classifier_fixtures() {
    let c = ClassifierConfig::default();
    let cases = [
        (state(true, true, 1.2, 14.0, 12.0, None), TaskFamily::ObjectNav, FailureCategory::NotAFailure),
        (state(false, true, 3.7, 16.0, 12.0, None), TaskFamily::Vln, FailureCategory::ReachedMissedStop),
        (state(false, false, 4.1, 10.0, 12.0, None), TaskFamily::ObjectNav, FailureCategory::ApproachedUndershot),
        (state(false, false, 9.5, 30.2, 12.0, None), TaskFamily::Vln, FailureCategory::WanderedLost),
        (state(false, false, 8.0, 6.0, 12.0, None), TaskFamily::ObjectNav, FailureCategory::EarlyStopWrongTarget),
        (state(false, true, 1.0, 13.0, 12.0, Some(false)), TaskFamily::Eqa, FailureCategory::WrongAnswerEQA),
    ];
    for (s, fam, want) in cases {
        assert_eq!(classify_failure(&s, fam, 3.0, &c), want, "{s:?}");
    }
}

#[test]
fn classifier_handles_unreachable() {
    let c = ClassifierConfig::default();
    let s = state(false, false, f64::INFINITY, 5.0, 12.0, None);
    assert_eq!(classify_failure(&s, TaskFamily::ObjectNav, 3.0, &c), FailureCategory::EarlyStopWrongTarget);
}

fn record(seed: u64, sr: bool, failure: FailureCategory) -> EpisodeRecord {
    EpisodeRecord {
        world: "w".into(),
        seed,
        metrics: EpisodeMetrics {
            ne: if sr { 0.5 } else { 5.0 },
            sr,
            osr: sr,
            spl: if sr { 0.8 } else { 0.0 },
            ndtw: None,
            acc: None,
            shortest_length: 10.0,
            path_length: 12.5,
        },
        failure,
    }
}

#[test]
fn aggregate_seed_statistics() {
    // Seed success rates 0.4, 0.5 and 0.6 over ten episodes each.
    let groups: Vec<Vec<EpisodeRecord>> = [4, 5, 6]
        .iter()
        .enumerate()
        .map(|(s, &k)| {
            (0..10)
                .map(|i| {
                    if i < k {
                        record(s as u64, true, FailureCategory::NotAFailure)
                    } else {
                        record(s as u64, false, FailureCategory::WanderedLost)
                    }
                })
                .collect()
        })
        .collect();
    let t = aggregate(&groups).unwrap();
    assert!((t.sr.mean - 0.5).abs() <= 1e-12);
    assert!((t.sr.std - 0.1).abs() <= 1e-12);
    assert_eq!(t.episodes, 30);
    let fail_pct: f64 = t.failures.iter().map(|r| r.pct_failures).sum();
    assert!((fail_pct - 100.0).abs() <= 1e-9);
    let trial_pct: f64 = t.failures.iter().map(|r| r.pct_trials).sum();
    assert!((trial_pct - 100.0).abs() <= 1e-9);
    assert!(t.ndtw.is_none() && t.acc.is_none());

    let same = vec![groups[0].clone(), groups[0].clone()];
    assert_eq!(aggregate(&same).unwrap().sr.std, 0.0);
    assert_eq!(aggregate(&[]), Err(MetricsError::NoData));
    assert!(render_table(&[("full".into(), t.clone())]).contains("50.0 ± 10.0"));
}

#[test]
fn grouping_by_seed() {
    let recs = vec![
        record(2, true, FailureCategory::NotAFailure),
        record(0, false, FailureCategory::WanderedLost),
        record(2, false, FailureCategory::WanderedLost),
    ];
    let g = group_by_seed(&recs);
    assert_eq!(g.len(), 2);
    assert_eq!(g[0].len(), 1);
    assert_eq!(g[1].len(), 2);
}

proptest! {
    #[test]
    fn classifier_is_total(
        success in any::<bool>(),
        oracle in any::<bool>(),
        ne in prop_oneof![0.0..40.0f64, Just(f64::INFINITY)],
        path in 0.0..80.0f64,
        shortest in 0.0..30.0f64,
        answer in proptest::option::of(any::<bool>()),
        fam in prop_oneof![Just(TaskFamily::ObjectNav), Just(TaskFamily::Vln), Just(TaskFamily::Eqa)],
    ) {
        let s = state(success, oracle || success, ne, path, shortest, answer);
        let c = classify_failure(&s, fam, 3.0, &ClassifierConfig::default());
        prop_assert_eq!(c == FailureCategory::NotAFailure, success);
        prop_assert_eq!(c, classify_failure(&s, fam, 3.0, &ClassifierConfig::default()));
    }

    #[test]
    fn ndtw_self_is_one(pts in proptest::collection::vec((0.0..20.0f64, 0.0..20.0f64), 1..30)) {
        let path: Vec<Point3> = pts.iter().map(|&(x, y)| p(x, y)).collect();
        prop_assert!((ndtw(&path, &path, 3.0) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn dtw_agrees_with_recursion(
        a in proptest::collection::vec((0.0..5.0f64, 0.0..5.0f64), 1..6),
        b in proptest::collection::vec((0.0..5.0f64, 0.0..5.0f64), 1..6),
    ) {
        let a: Vec<Point3> = a.iter().map(|&(x, y)| p(x, y)).collect();
        let b: Vec<Point3> = b.iter().map(|&(x, y)| p(x, y)).collect();
        prop_assert!((dtw(&a, &b) - dtw_reference(&a, &b)).abs() <= 1e-9);
    }
}
