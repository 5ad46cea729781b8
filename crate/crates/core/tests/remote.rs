mod common;

use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::Reply;
use navloop::agent::{BackendError, PromptPayload};
use navloop::remote::{EndpointConfig, RemoteBackend, Role};
use navloop::runner::{EpisodeTrace, Termination};

fn backend(url: &str) -> (RemoteBackend, Arc<Mutex<Vec<Duration>>>) {
    let sleeps = Arc::new(Mutex::new(vec![]));
    let s = sleeps.clone();
    let b = RemoteBackend::new(EndpointConfig::new(url)).unwrap().with_sleeper(move |d| s.lock().unwrap().push(d));
    (b, sleeps)
}

fn payload() -> PromptPayload {
    PromptPayload {
        text_blocks: vec!["where next".into()],
        images: vec![],
        metadata: Default::default(),
    }
}

#[test]
fn server_error_is_retried() {
    let stub = common::spawn(vec![Reply::Status(503), Reply::Text("fine".into())]);
    let (b, sleeps) = backend(&stub.url);
    assert_eq!(b.remote_decide(Role::Lang, &payload()).unwrap(), "fine");
    assert_eq!(*sleeps.lock().unwrap(), vec![Duration::from_secs(1)]);
    assert_eq!(stub.bodies().len(), 2);
}

#[test]
fn client_error_and_malformed_body_are_final() {
    let stub = common::spawn(vec![Reply::Status(404)]);
    let (b, sleeps) = backend(&stub.url);
    assert_eq!(b.remote_decide(Role::Vis, &payload()), Err(BackendError::Http("status 404".into())));
    assert!(sleeps.lock().unwrap().is_empty());

    let stub = common::spawn(vec![Reply::Raw("<html>busy</html>".into())]);
    let (b, sleeps) = backend(&stub.url);
    assert!(matches!(b.remote_decide(Role::Lang, &payload()), Err(BackendError::Malformed(_))));
    assert!(sleeps.lock().unwrap().is_empty());
}

#[test]
fn request_goes_to_the_role_path() {
    let stub = common::spawn(vec![Reply::Text("{}".into())]);
    let (b, _) = backend(&stub.url);
    b.remote_decide(Role::Vis, &payload()).unwrap();
    let body: serde_json::Value = serde_json::from_str(&stub.bodies()[0]).unwrap();
    assert_eq!(body["role"], "vis");
    assert_eq!(body["text_blocks"][0], "where next");
}

/// An endpoint that never produces a usable decision ends the episode
/// without a backend failure.
#[test]
fn unusable_answers_end_the_episode_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_navloop");
    let worlds = tmp.path().join("w");
    let made = Command::new(bin).args(["worldgen", "--count", "1", "--out", worlds.to_str().unwrap()]).output().unwrap();
    assert!(made.status.success());
    let stub = common::spawn(vec![Reply::Text("I would rather not say.".into())]);
    let out = tmp.path().join("t");
    let run = Command::new(bin)
        .args(["run", "--worlds", worlds.to_str().unwrap(), "--backend", "http", "--endpoint", &stub.url])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let trace = std::fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let t = EpisodeTrace::read(&trace).unwrap();
    assert!(!t.final_summary.success);
    assert_ne!(t.final_summary.termination, Termination::Stopped);
    assert!(!stub.bodies().is_empty());
}
