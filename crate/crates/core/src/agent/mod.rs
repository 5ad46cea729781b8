//! Decision-backend boundary: tool-call schemas, tolerant parsing, prompt
//! assembly, and the scripted backends used for verification.

mod faulty;
mod oracle;
mod parse;
mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, ViewDir};
use crate::world::PanoramaObservation;

pub use faulty::FaultyBackend;
pub use oracle::{oracle_vis_decide, ForgetfulOracle, OracleBackend};
pub use parse::{
    extract_json, parse_init_response, parse_lang_response, parse_verify_response, parse_vis_response, Parsed,
};
pub use prompt::{
    build_init_prompt, build_lang_prompt, build_recovery_prompt, build_verify_prompt, build_vis_prompt,
    depth_png, EncodedImage, History, PromptOptions, PromptPayload, RecoveryFrame, CHECKLIST_HEADING,
    PROMPT_VERSION,
};

use crate::tdm::TodoUpdateOp;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentError {
    #[error("unparseable decision: {0}")]
    UnparseableDecision(String),
    #[error("no grounding target in view")]
    GroundingFailed,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend http error: {0}")]
    Http(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StairDir {
    Up,
    Down,
}

impl StairDir {
    pub fn as_str(self) -> &'static str {
        match self {
            StairDir::Up => "up",
            StairDir::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LangAction {
    Turn {
        direction: ViewDir,
    },
    Backtrack {
        waypoint_id: u64,
    },
    GoStair {
        direction: StairDir,
    },
    DoubleCheck {
        stop: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
}

impl fmt::Display for LangAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LangAction::Turn { direction } => write!(f, "turn({direction})"),
            LangAction::Backtrack { waypoint_id } => write!(f, "backtrack({waypoint_id})"),
            LangAction::GoStair { direction } => write!(f, "go_stair({})", direction.as_str()),
            LangAction::DoubleCheck { stop, answer } => match answer {
                Some(a) => write!(f, "double_check({}, {a:?})", if *stop { "stop" } else { "continue" }),
                None => write!(f, "double_check({})", if *stop { "stop" } else { "continue" }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangDecision {
    pub progress_analysis: String,
    pub reasoning_todo: String,
    #[serde(default)]
    pub todo_ops: Vec<TodoUpdateOp>,
    pub reasoning_action: String,
    pub action: LangAction,
}

impl LangDecision {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VisSelect {
    BBox { u_min: u32, v_min: u32, u_max: u32, v_max: u32 },
    Point { u: u32, v: u32 },
}

impl VisSelect {
    pub fn center(&self) -> (u32, u32) {
        match *self {
            VisSelect::BBox {
                u_min,
                v_min,
                u_max,
                v_max,
            } => ((u_min + u_max) / 2, (v_min + v_max) / 2),
            VisSelect::Point { u, v } => (u, v),
        }
    }

    /// Inclusive pixel bounds.
    pub fn bounds(&self) -> (u32, u32, u32, u32) {
        match *self {
            VisSelect::BBox {
                u_min,
                v_min,
                u_max,
                v_max,
            } => (u_min, v_min, u_max, v_max),
            VisSelect::Point { u, v } => (u, v, u, v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisDecision {
    pub select: VisSelect,
    pub target_desc: String,
}

impl VisDecision {
    /// Wire form: `select` is `[u_min, v_min, u_max, v_max]` or `[u, v]`.
    pub fn to_json(&self) -> String {
        let select = match self.select {
            VisSelect::BBox {
                u_min,
                v_min,
                u_max,
                v_max,
            } => serde_json::json!([u_min, v_min, u_max, v_max]),
            VisSelect::Point { u, v } => serde_json::json!([u, v]),
        };
        serde_json::json!({"select": select, "target_desc": self.target_desc}).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyDecision {
    pub confirm: bool,
    pub reasoning: String,
}

/// Which prompt a language call answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Init,
    Navigate,
    Recover,
    Verify,
    Vision,
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Init => "init",
            CallKind::Navigate => "navigate",
            CallKind::Recover => "recover",
            CallKind::Verify => "verify",
            CallKind::Vision => "vision",
        }
    }
}

/// Agent-side state that accompanies a call. Remote backends ignore it;
/// scripted backends read poses and views from it in place of perception.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub kind: CallKind,
    pub round: usize,
    pub steps_taken: usize,
    pub pose: Pose,
    pub start_pose: Pose,
    /// Every pose the agent has occupied so far, oldest first.
    pub pose_history: &'a [Pose],
    pub panorama: Option<&'a PanoramaObservation>,
    /// The view chosen by the language call (vision calls).
    pub chosen_dir: Option<ViewDir>,
    /// The direction that failed (recovery calls).
    pub failed_dir: Option<ViewDir>,
    /// Earlier waypoints the agent can return to, oldest first. Empty when
    /// backtracking is unavailable.
    pub waypoints: &'a [(u64, Pose)],
}

pub trait DecisionBackend: Send + Sync {
    fn decide_lang(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError>;
    fn decide_vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError>;
    fn name(&self) -> String;
}

impl<B: DecisionBackend + ?Sized> DecisionBackend for Box<B> {
    fn decide_lang(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        (**self).decide_lang(payload, ctx)
    }

    fn decide_vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        (**self).decide_vis(payload, ctx)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<B: DecisionBackend + ?Sized> DecisionBackend for std::sync::Arc<B> {
    fn decide_lang(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        (**self).decide_lang(payload, ctx)
    }

    fn decide_vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        (**self).decide_vis(payload, ctx)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}
