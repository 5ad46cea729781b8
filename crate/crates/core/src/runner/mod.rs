//! The episode loop: observe, decide, update the checklist, act.

pub mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    build_init_prompt, build_lang_prompt, build_recovery_prompt, build_verify_prompt, build_vis_prompt,
    parse_init_response, parse_lang_response, parse_verify_response, parse_vis_response, AgentError, BackendError,
    CallKind, DecisionBackend, DecisionContext, History, LangAction, LangDecision, Parsed, PromptOptions,
    PromptPayload, RecoveryFrame, StairDir, VisDecision,
};
use crate::geometry::{backproject, normalize_deg, Point3, Pose, ViewDir};
use crate::mapping::OccupancyGrid;
use crate::planner::{direction_constrained_waypoint, plan_3d, plan_to, Path, AERIAL_CORRIDOR};
use crate::scb::{assemble_recovery_context, backtrack_path, record_waypoint, FrameEntry, RecoveryContext, WaypointBuffer};
use crate::tdm::{apply, init_list, TodoList};
use crate::world::{
    fly_to, render_panorama, render_view, stair_transition, step, AgentState, GeodesicField, LowLevelAction,
    PanoramaObservation, TaskFamily, View, WorldError, WorldModel,
};

pub use trace::{
    BacktrackTrigger, EpisodeTrace, FinalSummary, Termination, TraceEvent, TraceHeader, TRACE_FORMAT, TRACE_VERSION,
};

/// Distance at which the follower counts a path point as reached.
pub const ARRIVAL_TOLERANCE_M: f64 = 0.2;
/// Heading error beyond which the follower turns before moving.
pub const HEADING_TOLERANCE_DEG: f64 = 15.0;
/// A round that moves the agent less than this is blocked.
pub const BLOCKED_DISPLACEMENT_M: f64 = 0.25;
/// Automatic backtracking only returns to waypoints at least this far away.
pub const AUTO_BACKTRACK_MIN_M: f64 = 0.5;
/// Aerial targets stop this short of the selected surface.
pub const AERIAL_STANDOFF_M: f64 = 1.5;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("no valid depth inside the selected region")]
    GroundingDepthFailure,
    #[error("trace: {0}")]
    Trace(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub tdm: bool,
    pub scb: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { tdm: true, scb: true }
    }
}

impl Ablation {
    /// `none` keeps both modules; `tdm` or `scb` removes that one; `both`
    /// removes both.
    pub fn from_flag(s: &str) -> Option<Ablation> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "full" => Some(Ablation { tdm: true, scb: true }),
            "tdm" => Some(Ablation { tdm: false, scb: true }),
            "scb" => Some(Ablation { tdm: true, scb: false }),
            "both" | "all" => Some(Ablation { tdm: false, scb: false }),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match (self.tdm, self.scb) {
            (true, true) => "full",
            (false, true) => "no_tdm",
            (true, false) => "no_scb",
            (false, false) => "no_tdm_no_scb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Overrides the task's radius when set.
    pub success_radius: Option<f64>,
    pub ablation: Ablation,
    pub seed: u64,
    /// Maximum number of decision rounds.
    pub lang_calls_cap: usize,
    pub max_steps_per_round: usize,
    /// Extra attempts when a response cannot be parsed.
    pub parse_retries: usize,
    pub max_backtracks: usize,
    /// Consecutive blocked rounds before an automatic backtrack.
    pub auto_backtrack_after: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 500,
            success_radius: None,
            ablation: Ablation::default(),
            seed: 0,
            lang_calls_cap: 50,
            max_steps_per_round: 20,
            parse_retries: 2,
            max_backtracks: 5,
            auto_backtrack_after: 3,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: &str| Err(RunnerError::InvalidConfig(m.into()));
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if self.lang_calls_cap == 0 {
            return bad("lang_calls_cap must be positive");
        }
        if self.max_steps_per_round == 0 {
            return bad("max_steps_per_round must be positive");
        }
        if self.auto_backtrack_after == 0 {
            return bad("auto_backtrack_after must be positive");
        }
        if let Some(r) = self.success_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad("success_radius must be positive");
            }
        }
        Ok(())
    }
}

/// World point under the selection: the box center pixel, or the valid pixel
/// nearest to it inside the box when the center has no return.
pub fn resolve_target_point(vis: &VisDecision, view: &View, pose: &Pose) -> Result<Point3, RunnerError> {
    let (u0, v0, u1, v1) = vis.select.bounds();
    let (cu, cv) = vis.select.center();
    let u1 = u1.min(view.width().saturating_sub(1));
    let v1 = v1.min(view.height().saturating_sub(1));
    let mut best: Option<(u64, u32, u32, f64)> = None;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let Some(d) = view.depth(u, v) else { continue };
            let du = u as i64 - cu as i64;
            let dv = v as i64 - cv as i64;
            let key = (du * du + dv * dv) as u64;
            if best.is_none_or(|b| (key, v, u) < (b.0, b.1, b.2)) {
                best = Some((key, v, u, d));
            }
        }
    }
    let (_, v, u, d) = best.ok_or(RunnerError::GroundingDepthFailure)?;
    let p = backproject(u as f64, v as f64, d, &view.intrinsics).map_err(|_| RunnerError::GroundingDepthFailure)?;
    view.dir.to_world(&p, pose).map_err(|_| RunnerError::GroundingDepthFailure)
}

fn wrap180(deg: f64) -> f64 {
    let d = normalize_deg(deg);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Result of repeatedly asking the backend until a response parses.
struct Answer<T> {
    raw: Vec<String>,
    parsed: Option<Parsed<T>>,
    errors: Vec<String>,
}

fn ask<T>(
    attempts: usize,
    mut call: impl FnMut() -> Result<String, BackendError>,
    parse: impl Fn(&str) -> Result<Parsed<T>, AgentError>,
) -> Result<Answer<T>, BackendError> {
    let mut out = Answer {
        raw: vec![],
        parsed: None,
        errors: vec![],
    };
    for _ in 0..attempts {
        let raw = call()?;
        let p = parse(&raw);
        out.raw.push(raw);
        match p {
            Ok(p) => {
                out.parsed = Some(p);
                break;
            }
            Err(e) => out.errors.push(e.to_string()),
        }
    }
    Ok(out)
}

enum Flow {
    Continue,
    Stop,
    Fail(BackendError),
}

struct Episode<'a> {
    world: &'a WorldModel,
    backend: &'a dyn DecisionBackend,
    cfg: &'a EpisodeConfig,
    start: Pose,
    agent: AgentState,
    map: OccupancyGrid,
    events: Vec<TraceEvent>,
    steps: usize,
    round: usize,
    poses: Vec<Pose>,
    frames: Vec<FrameEntry>,
    buffer: WaypointBuffer,
    history: History,
    todo: Option<TodoList>,
    pending_recovery: Option<RecoveryContext>,
    backtracks: usize,
    failed_verifications: usize,
    blocked_rounds: usize,
    round_blocked: bool,
    eqa_answer: Option<String>,
}

impl<'a> Episode<'a> {
    fn opts(&self) -> PromptOptions<'a> {
        PromptOptions {
            labels: &self.world.labels,
            allow_backtrack: self.cfg.ablation.scb,
            allow_stairs: !self.world.stair_links().is_empty(),
            round: self.round,
            steps_taken: self.steps,
        }
    }

    fn attempts(&self) -> usize {
        self.cfg.parse_retries + 1
    }

    fn warn(&mut self, message: impl Into<String>) {
        self.events.push(TraceEvent::Warning {
            round: self.round,
            message: message.into(),
        });
    }

    /// Waypoints offered for backtracking: same floor, direction recorded.
    fn backtrack_candidates(&self) -> Vec<(u64, Pose)> {
        if !self.cfg.ablation.scb || self.backtracks >= self.cfg.max_backtracks {
            return vec![];
        }
        self.buffer
            .records()
            .filter(|r| r.chosen_direction.is_some())
            .map(|r| (r.id, r.pose))
            .collect()
    }

    fn ctx<'b>(
        &'b self,
        kind: CallKind,
        panorama: Option<&'b PanoramaObservation>,
        waypoints: &'b [(u64, Pose)],
    ) -> DecisionContext<'b> {
        DecisionContext {
            kind,
            round: self.round,
            steps_taken: self.steps,
            pose: self.agent.pose,
            start_pose: self.start,
            pose_history: &self.poses,
            panorama,
            chosen_dir: None,
            failed_dir: None,
            waypoints,
        }
    }

    fn record_pose(&mut self, action: Option<LowLevelAction>, next: AgentState) {
        self.steps += 1;
        self.agent = next;
        let pose = next.pose;
        self.events.push(match action {
            Some(action) => TraceEvent::Step {
                step: self.steps,
                action,
                pose,
                collided: next.collided_last_step,
            },
            None => TraceEvent::Move {
                step: self.steps,
                pose,
                collided: next.collided_last_step,
            },
        });
        if self.poses.last() != Some(&pose) {
            self.poses.push(pose);
        }
        self.frames.push(FrameEntry {
            key: format!("s{}", self.steps),
            pose,
            waypoint: None,
        });
    }

    fn low_level(&mut self, a: LowLevelAction) -> Result<(), WorldError> {
        let next = step(self.world, &self.agent, a)?;
        self.record_pose(Some(a), next);
        Ok(())
    }

    /// Drives along a ground path. Returns true when the end was reached.
    fn follow(&mut self, path: &Path, budget: usize) -> Result<bool, WorldError> {
        let mut used = 0;
        let pts = &path.waypoints;
        let mut i = 1.min(pts.len());
        while i < pts.len() {
            let p = &pts[i];
            let pose = self.agent.pose;
            let (dx, dy) = (p.x - pose.x, p.y - pose.y);
            let d = dx.hypot(dy);
            let last = i + 1 == pts.len();
            if d <= ARRIVAL_TOLERANCE_M || (!last && d <= crate::world::FORWARD_STEP_M) {
                i += 1;
                continue;
            }
            if used >= budget || self.steps >= self.cfg.max_steps {
                return Ok(false);
            }
            let diff = wrap180(dy.atan2(dx).to_degrees() - pose.yaw);
            let a = if diff > HEADING_TOLERANCE_DEG {
                LowLevelAction::TurnLeft
            } else if diff < -HEADING_TOLERANCE_DEG {
                LowLevelAction::TurnRight
            } else {
                LowLevelAction::MoveForward
            };
            self.low_level(a)?;
            used += 1;
            if self.agent.collided_last_step {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Turns in place to `yaw` in 30° steps, within the step budget.
    fn face(&mut self, yaw: f64) -> Result<(), WorldError> {
        for _ in 0..12 {
            let diff = wrap180(yaw - self.agent.pose.yaw);
            if diff.abs() <= HEADING_TOLERANCE_DEG || self.steps >= self.cfg.max_steps {
                break;
            }
            self.low_level(if diff > 0.0 {
                LowLevelAction::TurnLeft
            } else {
                LowLevelAction::TurnRight
            })?;
        }
        Ok(())
    }

    /// Flies along an aerial path, one segment per step.
    fn fly(&mut self, path: &Path, budget: usize) -> Result<(), WorldError> {
        let mut used = 0;
        for p in path.waypoints.iter().skip(1) {
            loop {
                if self.agent.pose.position().distance_unchecked(p) <= ARRIVAL_TOLERANCE_M {
                    break;
                }
                if used >= budget || self.steps >= self.cfg.max_steps {
                    return Ok(());
                }
                let next = fly_to(self.world, &self.agent, p)?;
                self.record_pose(None, next);
                used += 1;
                if next.collided_last_step {
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn init_checklist(&mut self, pano: &PanoramaObservation) -> Result<(), BackendError> {
        let payload = build_init_prompt(&self.world.task, pano, &self.opts());
        let ctx = self.ctx(CallKind::Init, Some(pano), &[]);
        let ans = ask(self.attempts(), || self.backend.decide_lang(&payload, &ctx), parse_init_response)?;
        let mut warnings = ans.errors;
        let subgoals = match ans.parsed {
            Some(p) => {
                warnings.extend(p.warnings);
                p.value
            }
            None => vec![],
        };
        let todo = match init_list(&subgoals) {
            Ok(t) => t,
            Err(e) => {
                warnings.push(format!("{e}; using the instruction as the only item"));
                init_list(&[self.world.task.instruction.as_str()]).expect("one item")
            }
        };
        self.events.push(TraceEvent::Init {
            raw: ans.raw,
            subgoals,
            warnings,
            todo: todo.clone(),
        });
        self.todo = Some(todo);
        Ok(())
    }

    fn decide(&mut self, pano: &PanoramaObservation) -> Result<Option<LangDecision>, BackendError> {
        let task = &self.world.task;
        let opts = self.opts();
        let recovery = self.pending_recovery.take();
        let (kind, payload, failed_dir) = match &recovery {
            Some(rc) => {
                let mut frames = vec![];
                for (key, pose) in rc.failure.frames.iter().zip(&rc.failure.poses) {
                    match render_view(self.world, pose, ViewDir::Front) {
                        Ok(view) => frames.push(RecoveryFrame { key: key.clone(), view }),
                        Err(e) => self.warn(format!("frame {key} not rendered: {e}")),
                    }
                }
                let p = build_recovery_prompt(
                    task,
                    rc.waypoint_id,
                    pano,
                    rc.failed_direction,
                    &frames,
                    self.todo.as_ref(),
                    &opts,
                );
                (CallKind::Recover, p, Some(rc.failed_direction))
            }
            None => (
                CallKind::Navigate,
                build_lang_prompt(task, pano, &self.history, self.todo.as_ref(), &opts),
                None,
            ),
        };
        let wps = self.backtrack_candidates();
        let mut ctx = self.ctx(kind, Some(pano), &wps);
        ctx.failed_dir = failed_dir;
        let ans = ask(self.attempts(), || self.backend.decide_lang(&payload, &ctx), parse_lang_response)?;
        let mut warnings = ans.errors;
        let (mut decision, rung) = match ans.parsed {
            Some(p) => {
                warnings.extend(p.warnings);
                (Some(p.value), p.rung)
            }
            None => (None, 0),
        };
        if let Some(d) = decision.as_mut() {
            if self.todo.is_none() && !d.todo_ops.is_empty() {
                warnings.push(format!("{} checklist ops ignored without a checklist", d.todo_ops.len()));
                d.todo_ops.clear();
            }
        }
        self.events.push(TraceEvent::Lang {
            round: self.round,
            kind,
            payload_digest: payload.digest(),
            raw: ans.raw,
            decision: decision.clone(),
            rung,
            warnings,
        });
        Ok(decision)
    }

    fn apply_todo(&mut self, decision: &LangDecision) {
        let Some(list) = &self.todo else { return };
        let (next, warnings) = apply(list, &decision.todo_ops);
        self.events.push(TraceEvent::Todo {
            round: self.round,
            ops: decision.todo_ops.clone(),
            warnings,
            snapshot: next.clone(),
        });
        self.todo = Some(next);
    }

    fn vis_call(&mut self, payload: &PromptPayload, pano: &PanoramaObservation, dir: ViewDir, view: &View) -> Result<Option<VisDecision>, BackendError> {
        let mut ctx = self.ctx(CallKind::Vision, Some(pano), &[]);
        ctx.chosen_dir = Some(dir);
        let (w, h) = (view.width(), view.height());
        let ans = ask(self.attempts(), || self.backend.decide_vis(payload, &ctx), |r| parse_vis_response(r, w, h))?;
        let mut warnings = ans.errors;
        let decision = ans.parsed.map(|p| {
            warnings.extend(p.warnings);
            p.value
        });
        self.events.push(TraceEvent::Vis {
            round: self.round,
            raw: ans.raw,
            decision: decision.clone(),
            warnings,
        });
        Ok(decision)
    }

    fn turn(&mut self, pano: &PanoramaObservation, wp: u64, dir: ViewDir, reasoning: &str) -> Result<(), BackendError> {
        let _ = self.buffer.set_direction(wp, Some(dir));
        let Some(view) = pano.view(dir) else {
            self.warn(format!("no {dir} view"));
            self.round_blocked = true;
            return Ok(());
        };
        let payload = build_vis_prompt(&self.world.task, view, reasoning, &self.opts());
        let vis = self.vis_call(&payload, pano, dir, view)?;
        let pose = self.agent.pose;
        let target = match &vis {
            Some(v) => resolve_target_point(v, view, &pose),
            None => Err(RunnerError::GroundingDepthFailure),
        };
        self.events.push(TraceEvent::Target {
            round: self.round,
            point: target.as_ref().ok().copied(),
            error: target.as_ref().err().map(|e| e.to_string()),
        });
        let budget = self.cfg.max_steps_per_round;
        if self.world.is_aerial() {
            let goal = match target {
                Ok(p) => {
                    let here = pose.position();
                    let len = here.distance_unchecked(&p);
                    let s = if len > 0.0 { (len - AERIAL_STANDOFF_M).max(0.0) / len } else { 0.0 };
                    let t = here.offset([(p.x - here.x) * s, (p.y - here.y) * s, (p.z - here.z) * s]);
                    Ok(Point3::world(t.x, t.y, t.z.clamp(AERIAL_CORRIDOR.0, AERIAL_CORRIDOR.1)))
                }
                Err(_) => {
                    let bearing = self.world.task.goal_bearing.unwrap_or([1.0, 0.0, 0.0]);
                    match pano.view(ViewDir::Front) {
                        Some(front) => direction_constrained_waypoint(&self.start, &pose, bearing, front),
                        None => Err(crate::planner::PlanError::BlockedAhead),
                    }
                }
            };
            let path = goal.and_then(|g| plan_3d(&self.map, &pose.position(), &g));
            self.log_plan(&path);
            match path {
                Ok(p) => {
                    if let Err(e) = self.fly(&p, budget) {
                        self.warn(e.to_string());
                    }
                }
                Err(_) => self.round_blocked = true,
            }
            return Ok(());
        }
        let Ok(target) = target else {
            self.round_blocked = true;
            return Ok(());
        };
        let path = plan_to(&self.map, &pose, &target);
        self.log_plan(&path);
        match path {
            Ok(p) => {
                if let Err(e) = self.follow(&p, budget) {
                    self.warn(e.to_string());
                }
            }
            Err(_) => self.round_blocked = true,
        }
        Ok(())
    }

    fn log_plan(&mut self, path: &Result<Path, crate::planner::PlanError>) {
        self.events.push(TraceEvent::Plan {
            round: self.round,
            length: path.as_ref().ok().map(|p| p.length),
            waypoints: path.as_ref().ok().map(|p| p.waypoints.clone()),
            error: path.as_ref().err().map(|e| e.to_string()),
        });
    }

    fn verify(&mut self, pano: &PanoramaObservation, answer: Option<String>) -> Result<bool, BackendError> {
        let payload = build_verify_prompt(&self.world.task, pano, answer.as_deref(), self.todo.as_ref(), &self.opts());
        let ctx = self.ctx(CallKind::Verify, Some(pano), &[]);
        let ans = ask(self.attempts(), || self.backend.decide_lang(&payload, &ctx), parse_verify_response)?;
        let mut warnings = ans.errors;
        let confirm = match ans.parsed {
            Some(p) => {
                warnings.extend(p.warnings);
                p.value.confirm
            }
            None => false,
        };
        self.events.push(TraceEvent::Verify {
            round: self.round,
            raw: ans.raw,
            confirm,
            warnings,
        });
        Ok(confirm)
    }

    fn backtrack(&mut self, k: u64, trigger: BacktrackTrigger) {
        let from = self.agent.pose;
        let fail = |ep: &mut Self, error: String| {
            ep.round_blocked = true;
            ep.events.push(TraceEvent::Backtrack {
                round: ep.round,
                waypoint_id: k,
                trigger: trigger.clone(),
                from,
                path_length: None,
                arrived: false,
                context: None,
                error: Some(error),
            });
        };
        if self.backtracks >= self.cfg.max_backtracks {
            return fail(self, format!("backtrack limit of {} reached", self.cfg.max_backtracks));
        }
        let context = match assemble_recovery_context(&self.buffer, k, &self.frames) {
            Ok(c) => c,
            Err(e) => return fail(self, e.to_string()),
        };
        let path = match backtrack_path(&self.buffer, k, &self.map, &from) {
            Ok(p) => p,
            Err(e) => return fail(self, e.to_string()),
        };
        let budget = self.cfg.max_steps.saturating_sub(self.steps);
        let mut arrived = match self.follow(&path, budget) {
            Ok(a) => a,
            Err(e) => {
                self.warn(e.to_string());
                false
            }
        };
        if arrived {
            if let Err(e) = self.face(context.waypoint_pose.yaw) {
                self.warn(e.to_string());
                arrived = false;
            }
        }
        self.backtracks += 1;
        self.events.push(TraceEvent::Backtrack {
            round: self.round,
            waypoint_id: k,
            trigger,
            from,
            path_length: Some(path.length),
            arrived,
            context: Some(context.clone()),
            error: None,
        });
        self.pending_recovery = Some(context);
    }

    fn auto_backtrack_target(&self) -> Option<u64> {
        let pose = self.agent.pose;
        self.buffer
            .records()
            .rev()
            .filter(|r| r.chosen_direction.is_some() && r.pose.floor == pose.floor)
            .find(|r| r.pose.planar_distance(&pose) >= AUTO_BACKTRACK_MIN_M)
            .map(|r| r.id)
    }

    fn round(&mut self) -> Result<Flow, WorldError> {
        self.round += 1;
        self.round_blocked = false;
        let round_start = self.agent.pose;
        let pose = self.agent.pose;
        let pano = render_panorama(self.world, &pose)?;
        self.map.integrate_panorama(&pose, &pano);
        let id = self.buffer.latest().map_or(0, |r| r.id + 1);
        let key = format!("w{id}");
        let caption = format!("waypoint {id} after {} steps", self.steps);
        let id = record_waypoint(&mut self.buffer, pose, &key, &caption);
        self.frames.push(FrameEntry {
            key: key.clone(),
            pose,
            waypoint: Some(id),
        });
        self.events.push(TraceEvent::Observe {
            round: self.round,
            step: self.steps,
            pose,
            panorama_key: key.clone(),
        });
        self.events.push(TraceEvent::Waypoint {
            round: self.round,
            id,
            pose,
            caption,
        });
        let decision = match self.decide(&pano) {
            Ok(d) => d,
            Err(e) => return Ok(Flow::Fail(e)),
        };
        let Some(decision) = decision else {
            self.warn("no parseable decision; re-observing");
            self.end_round(round_start, None);
            return Ok(Flow::Continue);
        };
        self.apply_todo(&decision);
        self.history.push_caption(format!("waypoint {id}: {}", decision.action));
        self.history.push_view(key);
        let mut flow = Flow::Continue;
        match &decision.action {
            LangAction::Turn { direction } => {
                self.failed_verifications = 0;
                if let Err(e) = self.turn(&pano, id, *direction, &decision.reasoning_action) {
                    flow = Flow::Fail(e);
                }
            }
            LangAction::GoStair { direction } => match stair_transition(self.world, &pose, *direction == StairDir::Up) {
                Some(p) => {
                    let mut next = self.agent;
                    next.pose = p;
                    next.collided_last_step = false;
                    self.record_pose(None, next);
                }
                None => {
                    self.warn(format!("no stairs {} within reach", direction.as_str()));
                    self.round_blocked = true;
                }
            },
            LangAction::DoubleCheck { stop: false, .. } => {}
            LangAction::DoubleCheck { stop: true, answer } => match self.verify(&pano, answer.clone()) {
                Ok(true) => {
                    self.low_level(LowLevelAction::Stop)?;
                    self.eqa_answer = answer.clone();
                    flow = Flow::Stop;
                }
                Ok(false) => {
                    self.failed_verifications += 1;
                    if self.failed_verifications >= 2 {
                        self.warn("stop rejected by verification twice in a row; continuing");
                    }
                }
                Err(e) => flow = Flow::Fail(e),
            },
            LangAction::Backtrack { waypoint_id } => {
                if self.cfg.ablation.scb {
                    self.backtrack(*waypoint_id, BacktrackTrigger::Backend);
                } else {
                    self.warn("backtracking is disabled");
                    self.round_blocked = true;
                }
            }
        }
        if matches!(flow, Flow::Continue) {
            self.end_round(round_start, Some(decision.action));
        }
        Ok(flow)
    }

    fn end_round(&mut self, start: Pose, action: Option<LangAction>) {
        let pose = self.agent.pose;
        let displacement = if pose.floor == start.floor {
            pose.planar_distance(&start)
        } else {
            f64::INFINITY
        };
        let backtracked = matches!(action, Some(LangAction::Backtrack { .. }));
        let blocked = self.round_blocked || (!backtracked && displacement < BLOCKED_DISPLACEMENT_M);
        self.events.push(TraceEvent::RoundEnd {
            round: self.round,
            action,
            displacement: if displacement.is_finite() { displacement } else { pose.distance(&start) },
            blocked,
        });
        self.blocked_rounds = if blocked { self.blocked_rounds + 1 } else { 0 };
        if self.cfg.ablation.scb
            && self.blocked_rounds >= self.cfg.auto_backtrack_after
            && self.pending_recovery.is_none()
            && self.backtracks < self.cfg.max_backtracks
            && self.steps < self.cfg.max_steps
        {
            if let Some(k) = self.auto_backtrack_target() {
                self.blocked_rounds = 0;
                self.backtrack(k, BacktrackTrigger::Automatic);
            }
        }
    }
}

/// Runs one episode. Only invalid inputs are errors; backend failures end the
/// episode with [`Termination::BackendError`] in the summary.
pub fn run_episode(world: &WorldModel, backend: &dyn DecisionBackend, config: &EpisodeConfig) -> Result<EpisodeTrace, RunnerError> {
    config.validate()?;
    world.task.validate()?;
    let start = world.task.start;
    world.validate_pose(&start)?;
    let radius = config.success_radius.unwrap_or(world.task.success_radius);
    let header = TraceHeader {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
        world: world.name.clone(),
        world_fingerprint: world.fingerprint(),
        family: world.task.family.as_str().into(),
        backend: backend.name(),
        seed: config.seed,
        config: config.clone(),
        start,
        success_radius: radius,
    };
    let mut ep = Episode {
        world,
        backend,
        cfg: config,
        start,
        agent: AgentState::new(start),
        map: if world.is_aerial() {
            OccupancyGrid::new_3d(world.resolution)
        } else {
            OccupancyGrid::new_2d(world.resolution)
        },
        events: vec![],
        steps: 0,
        round: 0,
        poses: vec![start],
        frames: vec![],
        buffer: WaypointBuffer::default(),
        history: History::default(),
        todo: None,
        pending_recovery: None,
        backtracks: 0,
        failed_verifications: 0,
        blocked_rounds: 0,
        round_blocked: false,
        eqa_answer: None,
    };
    let mut failure: Option<BackendError> = None;
    if config.ablation.tdm {
        let pano = render_panorama(world, &start)?;
        ep.map.integrate_panorama(&start, &pano);
        if let Err(e) = ep.init_checklist(&pano) {
            failure = Some(e);
        }
    }
    let termination = if let Some(e) = &failure {
        ep.warn(format!("checklist planning failed: {e}"));
        Termination::BackendError
    } else {
        loop {
            if ep.steps >= config.max_steps {
                break Termination::MaxSteps;
            }
            if ep.round >= config.lang_calls_cap {
                break Termination::LangCallCap;
            }
            match ep.round()? {
                Flow::Continue => {}
                Flow::Stop => break Termination::Stopped,
                Flow::Fail(e) => {
                    ep.warn(format!("backend failed: {e}"));
                    failure = Some(e);
                    break Termination::BackendError;
                }
            }
        }
    };
    let field = GeodesicField::for_task(world);
    let final_pose = ep.agent.pose;
    let distance_to_goal = field.pose_distance(&final_pose);
    let oracle_success = ep.poses.iter().any(|p| field.pose_distance(p) <= radius);
    let path_length = ep.poses.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let stopped = termination == Termination::Stopped;
    let answer_ok = match world.task.family {
        TaskFamily::Eqa => match (&ep.eqa_answer, &world.task.eqa_answer) {
            (Some(a), Some(t)) => a.trim().eq_ignore_ascii_case(t.trim()),
            _ => false,
        },
        _ => true,
    };
    let final_summary = FinalSummary {
        success: stopped && distance_to_goal <= radius && answer_ok,
        oracle_success,
        distance_to_goal,
        path_length,
        steps_taken: ep.steps,
        stopped,
        eqa_answer: ep.eqa_answer.clone(),
        termination,
        decision_rounds: ep.round,
        backtracks: ep.backtracks,
        failure_reason: failure.map(|e| e.to_string()),
        final_pose,
    };
    Ok(EpisodeTrace {
        header,
        events: ep.events,
        final_summary,
    })
}

#[cfg(test)]
mod tests;
