//! Episode trace: one JSON object per line, header first, summary last.

use std::io::{BufRead, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{EpisodeConfig, RunnerError};
use crate::agent::{CallKind, LangAction, LangDecision, VisDecision};
use crate::geometry::{Point3, Pose};
use crate::scb::RecoveryContext;
use crate::tdm::{TodoList, TodoUpdateOp};
use crate::world::LowLevelAction;

pub const TRACE_FORMAT: &str = "navloop-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub world: String,
    pub world_fingerprint: String,
    pub family: String,
    pub backend: String,
    pub seed: u64,
    pub config: EpisodeConfig,
    pub start: Pose,
    pub success_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    MaxSteps,
    LangCallCap,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub success: bool,
    pub oracle_success: bool,
    /// Infinite when the final pose cannot reach any goal; written as null.
    #[serde(with = "inf_as_null")]
    pub distance_to_goal: f64,
    pub path_length: f64,
    pub steps_taken: usize,
    pub stopped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eqa_answer: Option<String>,
    pub termination: Termination,
    pub decision_rounds: usize,
    pub backtracks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub final_pose: Pose,
}

pub(crate) mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktrackTrigger {
    Backend,
    Automatic,
}

/// One trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Header(TraceHeader),
    /// Checklist planning call.
    Init {
        raw: Vec<String>,
        subgoals: Vec<String>,
        warnings: Vec<String>,
        todo: TodoList,
    },
    Observe {
        round: usize,
        step: usize,
        pose: Pose,
        panorama_key: String,
    },
    Waypoint {
        round: usize,
        id: u64,
        pose: Pose,
        caption: String,
    },
    Lang {
        round: usize,
        kind: CallKind,
        payload_digest: String,
        raw: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decision: Option<LangDecision>,
        rung: u8,
        warnings: Vec<String>,
    },
    Todo {
        round: usize,
        ops: Vec<TodoUpdateOp>,
        warnings: Vec<String>,
        snapshot: TodoList,
    },
    Vis {
        round: usize,
        raw: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decision: Option<VisDecision>,
        warnings: Vec<String>,
    },
    Target {
        round: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        point: Option<Point3>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Plan {
        round: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        length: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        waypoints: Option<Vec<Point3>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Step {
        step: usize,
        action: LowLevelAction,
        pose: Pose,
        collided: bool,
    },
    /// Aerial move or stair transition: a direct jump to a new pose.
    Move {
        step: usize,
        pose: Pose,
        collided: bool,
    },
    Verify {
        round: usize,
        raw: Vec<String>,
        confirm: bool,
        warnings: Vec<String>,
    },
    Backtrack {
        round: usize,
        waypoint_id: u64,
        trigger: BacktrackTrigger,
        from: Pose,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path_length: Option<f64>,
        arrived: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context: Option<RecoveryContext>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Warning {
        round: usize,
        message: String,
    },
    RoundEnd {
        round: usize,
        action: Option<LangAction>,
        displacement: f64,
        blocked: bool,
    },
    Final(FinalSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub final_summary: FinalSummary,
}

impl EpisodeTrace {
    pub fn file_name(&self) -> String {
        format!("{}_{}.trace.jsonl", self.header.world, self.header.seed)
    }

    /// Every pose the agent occupied, in order, starting with the start pose.
    pub fn poses(&self) -> Vec<Pose> {
        let mut out = vec![self.header.start];
        for e in &self.events {
            match e {
                TraceEvent::Step { pose, .. } | TraceEvent::Move { pose, .. }
                    if out.last() != Some(pose) => {
                        out.push(*pose);
                    }
                _ => {}
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        let line = |e: &TraceEvent| serde_json::to_string(e).expect("trace event serializes");
        s.push_str(&line(&TraceEvent::Header(self.header.clone())));
        s.push('\n');
        for e in &self.events {
            s.push_str(&line(e));
            s.push('\n');
        }
        s.push_str(&line(&TraceEvent::Final(self.final_summary.clone())));
        s.push('\n');
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RunnerError> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Self, RunnerError> {
        let mut header = None;
        let mut events = vec![];
        let mut final_summary = None;
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| RunnerError::Trace(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if final_summary.is_some() {
                return Err(RunnerError::Trace(format!("line {}: content after the summary", n + 1)));
            }
            let e: TraceEvent =
                serde_json::from_str(&line).map_err(|e| RunnerError::Trace(format!("line {}: {e}", n + 1)))?;
            match (e, header.is_some()) {
                (TraceEvent::Header(h), false) => {
                    if h.format != TRACE_FORMAT || h.version != TRACE_VERSION {
                        return Err(RunnerError::Trace(format!("unsupported trace {} v{}", h.format, h.version)));
                    }
                    header = Some(h)
                }
                (_, false) => return Err(RunnerError::Trace("first line must be the header".into())),
                (TraceEvent::Header(_), true) => return Err(RunnerError::Trace(format!("line {}: second header", n + 1))),
                (TraceEvent::Final(f), true) => final_summary = Some(f),
                (e, true) => events.push(e),
            }
        }
        Ok(EpisodeTrace {
            header: header.ok_or_else(|| RunnerError::Trace("empty trace".into()))?,
            events,
            final_summary: final_summary.ok_or_else(|| RunnerError::Trace("missing summary line".into()))?,
        })
    }

    pub fn write(&self, path: &FsPath) -> Result<(), RunnerError> {
        let mut f = std::fs::File::create(path).map_err(|e| RunnerError::Io(e.to_string()))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| RunnerError::Io(e.to_string()))
    }

    pub fn read(path: &FsPath) -> Result<Self, RunnerError> {
        let f = std::fs::File::open(path).map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_lines(std::io::BufReader::new(f).lines())
    }
}
