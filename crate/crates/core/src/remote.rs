//! HTTP client backend: one JSON POST per decision.
//!
//! Request body: `{"role": "lang" | "vis", "text_blocks": [..], "images":
//! [base64 png, ..], "metadata": {..}}`. Response body: `{"text": ".."}`.
//! Image captions travel in metadata as `image.<index>`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{BackendError, DecisionBackend, DecisionContext, PromptPayload};
use crate::world::{TaskFamily, WorldModel};

pub const TOKEN_ENV: &str = "NAVLOOP_API_TOKEN";
pub const DEFAULT_TIMEOUT_S: f64 = 180.0;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub lang_path: String,
    pub vis_path: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Read from the environment, never from files.
    #[serde(skip)]
    pub token: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000".into(),
            lang_path: "/lang".into(),
            vis_path: "/vis".into(),
            timeout_s: DEFAULT_TIMEOUT_S,
            max_retries: DEFAULT_MAX_RETRIES,
            token: None,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: &str) -> Self {
        EndpointConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            ..EndpointConfig::default()
        }
    }

    /// Picks up the bearer token from [`TOKEN_ENV`].
    pub fn with_env_token(mut self) -> Self {
        self.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("timeout must be positive, got {}", self.timeout_s));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("endpoint must be an http(s) URL, got {:?}", self.base_url));
        }
        Ok(())
    }

    pub fn url(&self, role: Role) -> String {
        let path = match role {
            Role::Lang => &self.lang_path,
            Role::Vis => &self.vis_path,
        };
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Lang,
    Vis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub role: Role,
    pub text_blocks: Vec<String>,
    pub images: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl WireRequest {
    pub fn new(role: Role, payload: &PromptPayload) -> Self {
        let mut metadata = payload.metadata.clone();
        for (i, img) in payload.images.iter().enumerate() {
            metadata.insert(format!("image.{i}"), img.caption.clone());
        }
        WireRequest {
            role,
            text_blocks: payload.text_blocks.clone(),
            images: payload.images.iter().map(|i| i.png_base64.clone()).collect(),
            metadata,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub text: String,
}

/// Waits before retry `attempt` (0-based): 1 s, 4 s, 16 s, ...
pub fn backoff(attempt: u32) -> Duration {
    Duration::from_secs(4u64.saturating_pow(attempt))
}

/// One request and its outcome, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub role: Role,
    pub request: String,
    pub response: Result<String, BackendError>,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct RemoteBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
    sleep: Sleeper,
    log: Mutex<Vec<Exchange>>,
}

impl RemoteBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, String> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .build()
            .new_agent();
        Ok(RemoteBackend {
            config,
            agent,
            sleep: Arc::new(std::thread::sleep),
            log: Mutex::new(vec![]),
        })
    }

    /// Replaces the wait between retries, for tests.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Every attempt made so far, oldest first.
    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("exchange log").clone()
    }

    fn post_once(&self, url: &str, body: &str) -> Result<String, BackendError> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(t) = &self.config.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let resp = req.send(body).map_err(classify)?;
        let text = resp.into_body().read_to_string().map_err(classify)?;
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("response is not {{\"text\": ..}}: {e}")))?;
        Ok(parsed.text)
    }

    pub fn remote_decide(&self, role: Role, payload: &PromptPayload) -> Result<String, BackendError> {
        let body = serde_json::to_string(&WireRequest::new(role, payload)).expect("request serializes");
        let url = self.config.url(role);
        let mut attempt = 0;
        loop {
            let out = self.post_once(&url, &body);
            log::debug!("{role:?} attempt {attempt}: {out:?}");
            self.log.lock().expect("exchange log").push(Exchange {
                role,
                request: body.clone(),
                response: out.clone(),
            });
            match out {
                Err(e) if retryable(&e) && attempt < self.config.max_retries => {
                    (self.sleep)(backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Timeout => true,
        BackendError::Http(m) => m.starts_with("status 5"),
        BackendError::Malformed(_) => false,
    }
}

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            BackendError::Timeout
        }
        ureq::Error::StatusCode(s) => BackendError::Http(format!("status {s}")),
        other => BackendError::Http(other.to_string()),
    }
}

impl DecisionBackend for RemoteBackend {
    fn decide_lang(&self, payload: &PromptPayload, _: &DecisionContext) -> Result<String, BackendError> {
        self.remote_decide(Role::Lang, payload)
    }

    fn decide_vis(&self, payload: &PromptPayload, _: &DecisionContext) -> Result<String, BackendError> {
        self.remote_decide(Role::Vis, payload)
    }

    fn name(&self) -> String {
        format!("http:{}", self.config.base_url)
    }
}

/// Ground-truth fragments of `world` found in a serialized request body:
/// goal and landmark coordinates, the expected answer, and field names of
/// the world file.
pub fn audit_payload(body: &str, world: &WorldModel) -> Vec<String> {
    let mut found = vec![];
    for key in ["goal_positions", "ordered_subgoals", "eqa_answer", "semantic", "label_id", "success_radius"] {
        if body.contains(key) {
            found.push(format!("field name {key}"));
        }
    }
    let t = &world.task;
    let points = t.goal_positions.iter().chain(t.ordered_subgoals.iter().map(|s| &s.position));
    for p in points {
        for v in [p.x, p.y] {
            let full = format!("{v}");
            if full.len() > 5 && body.contains(&full) {
                found.push(format!("coordinate {full}"));
            }
        }
        for pair in [format!("{:.2}, {:.2}", p.x, p.y), format!("{:.1}, {:.1}", p.x, p.y)] {
            if body.contains(&pair) {
                found.push(format!("position ({pair})"));
            }
        }
    }
    if t.family == TaskFamily::Eqa {
        if let Some(a) = &t.eqa_answer {
            let lower = body.to_lowercase();
            let a = a.to_lowercase();
            let in_question = t.instruction.to_lowercase().contains(&a);
            if !in_question && lower.contains(&format!("\"{a}\"")) {
                found.push(format!("answer {a}"));
            }
        }
    }
    found
}

#[cfg(test)]
mod tests;
