use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::agent::{EncodedImage, OracleBackend};
use crate::runner::{run_episode, EpisodeConfig};
use crate::world::{generate_world, GeneratorSpec};

fn payload() -> PromptPayload {
    PromptPayload {
        text_blocks: vec!["look around".into()],
        images: vec![EncodedImage {
            caption: "front view".into(),
            png_base64: "iVBORw0KGgo=".into(),
        }],
        metadata: BTreeMap::from([("call".to_string(), "navigate".to_string())]),
    }
}

#[test]
fn backoff_schedule() {
    let s: Vec<u64> = (0..3).map(|i| backoff(i).as_secs()).collect();
    assert_eq!(s, vec![1, 4, 16]);
}

#[test]
fn wire_request_shape() {
    let v = serde_json::to_value(WireRequest::new(Role::Vis, &payload())).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, vec!["images", "metadata", "role", "text_blocks"]);
    assert_eq!(v["role"], "vis");
    assert_eq!(v["images"][0], "iVBORw0KGgo=");
    assert_eq!(v["metadata"]["image.0"], "front view");
    assert_eq!(v["metadata"]["call"], "navigate");
}

#[test]
fn config_checks() {
    let c = EndpointConfig::new("http://localhost:9/");
    assert_eq!(c.url(Role::Lang), "http://localhost:9/lang");
    assert_eq!(c.timeout_s, 180.0);
    assert_eq!(c.max_retries, 3);
    assert!(c.validate().is_ok());
    let bad = EndpointConfig {
        timeout_s: 0.0,
        ..c.clone()
    };
    assert!(bad.validate().is_err());
    assert!(EndpointConfig::new("localhost:9").validate().is_err());
}

#[test]
fn refused_connection_is_not_retried() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let sleeps = Arc::new(AtomicUsize::new(0));
    let s = sleeps.clone();
    let b = RemoteBackend::new(EndpointConfig::new(&format!("http://127.0.0.1:{port}")))
        .unwrap()
        .with_sleeper(move |_| {
            s.fetch_add(1, Ordering::Relaxed);
        });
    let err = b.remote_decide(Role::Lang, &payload()).unwrap_err();
    assert!(matches!(err, BackendError::Http(_)), "{err:?}");
    assert_eq!(sleeps.load(Ordering::Relaxed), 0);
    assert_eq!(b.exchanges().len(), 1);
}

/// Records every request body the engine would send.
struct Recording {
    inner: OracleBackend,
    bodies: Mutex<Vec<String>>,
}

impl Recording {
    fn keep(&self, role: Role, p: &PromptPayload) {
        let body = serde_json::to_string(&WireRequest::new(role, p)).unwrap();
        self.bodies.lock().unwrap().push(body);
    }
}

impl DecisionBackend for Recording {
    fn decide_lang(&self, p: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        self.keep(Role::Lang, p);
        self.inner.decide_lang(p, ctx)
    }

    fn decide_vis(&self, p: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        self.keep(Role::Vis, p);
        self.inner.decide_vis(p, ctx)
    }

    fn name(&self) -> String {
        "recording".into()
    }
}

#[test]
fn payloads_carry_no_ground_truth() {
    for fam in [TaskFamily::ObjectNav, TaskFamily::Vln, TaskFamily::Eqa] {
        let w = generate_world(3, &GeneratorSpec::for_family(fam)).unwrap();
        let b = Recording {
            inner: OracleBackend::new(Arc::new(w.clone())),
            bodies: Mutex::new(vec![]),
        };
        run_episode(&w, &b, &EpisodeConfig::default()).unwrap();
        let bodies = b.bodies.lock().unwrap();
        assert!(!bodies.is_empty());
        for body in bodies.iter() {
            assert_eq!(audit_payload(body, &w), Vec::<String>::new());
        }
    }
}

#[test]
fn audit_flags_leaks() {
    let w = generate_world(3, &GeneratorSpec::for_family(TaskFamily::ObjectNav)).unwrap();
    let g = w.task.goal_positions[0];
    let leaky = format!("{{\"text_blocks\": [\"the goal is at {:.2}, {:.2}\"]}}", g.x, g.y);
    assert_eq!(audit_payload(&leaky, &w).len(), 1);
    assert!(!audit_payload("{\"goal_positions\": []}", &w).is_empty());
}
