use super::*;
use crate::runner::{BacktrackTrigger, TraceEvent};
use crate::world::TaskFamily;

fn worldgen(dir: &Path, fam: TaskFamily, seeds: Vec<u64>) -> Vec<PathBuf> {
    command_worldgen(&WorldgenArgs {
        spec: GeneratorSpec::for_family(fam),
        seeds,
        out: dir.to_path_buf(),
    })
    .unwrap()
}

fn manifest(worlds: Vec<PathBuf>, out: PathBuf, ablation: Ablation) -> RunManifest {
    RunManifest {
        worlds,
        backend: BackendChoice::Oracle,
        seeds: vec![0, 1],
        ablation,
        out_dir: out,
        error_rate: 0.0,
        episode: EpisodeConfig::default(),
        jobs: 2,
    }
}

#[test]
fn run_eval_classify_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let wdir = tmp.path().join("worlds");
    let files = worldgen(&wdir, TaskFamily::ObjectNav, vec![1, 2]);
    assert_eq!(files.len(), 2);
    let tdir = tmp.path().join("traces");
    let m = manifest(vec![wdir.clone()], tdir.clone(), Ablation::default());
    let report = command_run(&m).unwrap();
    assert_eq!(report.traces.len(), 4);
    assert_eq!(report.successes, 4);
    assert!(report.backend_failures.is_empty());

    let ev = command_eval(std::slice::from_ref(&tdir), std::slice::from_ref(&wdir), &ClassifierConfig::default()).unwrap();
    let full = &ev.configs["full"];
    assert_eq!(full.episodes, 4);
    assert_eq!(full.seeds, 2);
    assert_eq!(full.sr.mean, 1.0);
    assert!(ev.text().contains("full"));
    let back: EvalReport = serde_json::from_str(&ev.json()).unwrap();
    assert_eq!(back.episodes.len(), 4);

    let rows = command_classify(&[tdir], &[wdir], &ClassifierConfig::default()).unwrap();
    assert!(rows.iter().all(|r| r.category == FailureCategory::NotAFailure));
}

#[test]
fn ablate_flag_lands_in_trace_config() {
    let tmp = tempfile::tempdir().unwrap();
    let files = worldgen(tmp.path(), TaskFamily::ObjectNav, vec![4]);
    let out = tmp.path().join("t");
    let m = manifest(files, out, Ablation::from_flag("tdm").unwrap());
    let report = command_run(&m).unwrap();
    let t = EpisodeTrace::read(&report.traces[0]).unwrap();
    assert_eq!(t.header.config.ablation, Ablation { tdm: false, scb: true });
}

#[test]
fn missing_world_fails_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("traces");
    let m = manifest(vec![tmp.path().join("nope.world.json")], out.clone(), Ablation::default());
    let err = command_run(&m).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(!out.exists());
}

#[test]
fn bad_error_rate_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let files = worldgen(tmp.path(), TaskFamily::ObjectNav, vec![4]);
    let mut m = manifest(files, tmp.path().join("t"), Ablation::default());
    m.error_rate = 1.5;
    assert_eq!(command_run(&m).unwrap_err().exit_code(), 1);
}

fn one_trace(tmp: &Path) -> (EpisodeTrace, WorldModel) {
    let files = worldgen(tmp, TaskFamily::ObjectNav, vec![5]);
    let w = read_world(&files[0]).unwrap();
    let b = OracleBackend::new(Arc::new(w.clone()));
    (run_episode(&w, &b, &EpisodeConfig::default()).unwrap(), w)
}

#[test]
fn render_success_ends_in_goal_ring() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, w) = one_trace(tmp.path());
    assert!(t.final_summary.success);
    let svg = render_svg(&t, &w).unwrap();
    assert_eq!(svg, render_svg(&t, &w).unwrap());
    assert!(svg.contains("class=\"goal\""));
    assert_eq!(svg.matches("class=\"backtrack\"").count(), 0);
    // The end marker sits within the ring of the nearest goal.
    let end = t.final_summary.final_pose.position();
    let near = w
        .task
        .goal_positions
        .iter()
        .map(|g| g.planar_distance(&end).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(near <= t.header.success_radius);
}

#[test]
fn render_draws_one_arc_per_backtrack() {
    let tmp = tempfile::tempdir().unwrap();
    let (mut t, w) = one_trace(tmp.path());
    let wp = t
        .events
        .iter()
        .find_map(|e| match e {
            TraceEvent::Waypoint { id, .. } => Some(*id),
            _ => None,
        })
        .unwrap();
    t.events.push(TraceEvent::Backtrack {
        round: 9,
        waypoint_id: wp,
        trigger: BacktrackTrigger::Backend,
        from: t.final_summary.final_pose,
        path_length: Some(1.0),
        arrived: true,
        context: None,
        error: None,
    });
    let svg = render_svg(&t, &w).unwrap();
    assert_eq!(svg.matches("class=\"backtrack\"").count(), 1);
}

#[test]
fn render_rejects_other_world() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, _) = one_trace(tmp.path());
    let other = generate_world(6, &GeneratorSpec::for_family(TaskFamily::ObjectNav)).unwrap();
    assert!(matches!(render_svg(&t, &other), Err(CliError::SchemaMismatch(_))));
}

#[test]
fn file_config_parses_sections() {
    let text = r#"
[run]
backend = "oracle"
seeds = [7]
ablate = "scb"

[run.episode]
max_steps = 200

[classifier]
undershoot_band_m = 1.5
"#;
    let cfg: FileConfig = toml::from_str(text).unwrap();
    assert_eq!(cfg.run.seeds, Some(vec![7]));
    let ep = cfg.run.episode.unwrap();
    assert_eq!(ep.max_steps, 200);
    assert_eq!(ep.lang_calls_cap, EpisodeConfig::default().lang_calls_cap);
    let c = cfg.classifier.unwrap();
    assert_eq!(c.undershoot_band_m, 1.5);
    assert_eq!(c.wander_factor, 2.5);
    assert!(toml::from_str::<FileConfig>("[run]\nbogus = 1\n").is_err());
}
