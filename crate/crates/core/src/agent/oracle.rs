//! Scripted backends with ground-truth access. Test harness only: they read
//! the true map in place of perception.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::json;

use super::{
    AgentError, BackendError, CallKind, DecisionBackend, DecisionContext, LangAction, LangDecision, PromptPayload,
    StairDir, VisDecision, VisSelect,
};
use crate::geometry::{column_ray, normalize_deg, Point3, Pose, ViewDir};
use crate::planner::{descent_cells, DistanceField};
use crate::tdm::{parse_rendered, TodoList, TodoStatus, TodoUpdateOp};
use crate::world::{nearby_stair, segment_free, GeodesicField, TaskFamily, View, WorldModel};

/// Furthest path point the oracle aims at, in meters.
const AIM_RANGE_M: f64 = 8.0;
/// Minimum depth for the distal free-space fallback.
const DISTAL_MIN_M: f64 = 2.0;
const BOX_HALF_WIDTH: u32 = 2;
/// Distance lost against an earlier waypoint before the oracle goes back.
const REGRESSION_M: f64 = 1.0;
const REGRESSION_TIE_M: f64 = 0.5;
/// Angular window searched for a column that clears the way to the aim.
const CLEAR_WINDOW_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Target {
    Subgoal(usize),
    Goal,
}

impl Target {
    fn marker(self) -> String {
        match self {
            Target::Subgoal(i) => format!("[target: subgoal {}]", i + 1),
            Target::Goal => "[target: goal]".to_string(),
        }
    }

    fn find_in(text: &str) -> Option<Target> {
        let rest = &text[text.find("[target: ")? + 9..];
        let inner = &rest[..rest.find(']')?];
        if inner == "goal" {
            return Some(Target::Goal);
        }
        let k: usize = inner.strip_prefix("subgoal ")?.parse().ok()?;
        k.checked_sub(1).map(Target::Subgoal)
    }
}

struct Fields {
    plain: GeodesicField,
    inflated: GeodesicField,
}

/// Heading advice toward a target.
struct Steer {
    dir: ViewDir,
    aim: Point3,
    /// The aim is the end of the route and the agent should stop near it.
    landing: bool,
    stair: Option<StairDir>,
}

struct Truth {
    world: Arc<WorldModel>,
    cache: Mutex<HashMap<Target, Arc<Fields>>>,
}

fn sector_of(rel_deg: f64) -> ViewDir {
    let r = normalize_deg(rel_deg);
    if !(45.0..315.0).contains(&r) {
        ViewDir::Front
    } else if r < 135.0 {
        ViewDir::Left
    } else if r < 225.0 {
        ViewDir::Back
    } else {
        ViewDir::Right
    }
}

/// Signed angle in (-180, 180].
fn wrap180(deg: f64) -> f64 {
    let d = normalize_deg(deg);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

fn bearing_deg(from: &Pose, to: &Point3) -> f64 {
    (to.y - from.y).atan2(to.x - from.x).to_degrees()
}

fn box_at(view: &View, u: u32) -> VisSelect {
    let h = BOX_HALF_WIDTH.min(u).min(view.width() - 1 - u);
    let (v0, v1) = (view.band.0, view.band.1 - 1);
    if h == 0 {
        VisSelect::Point { u, v: (v0 + v1) / 2 }
    } else {
        VisSelect::BBox {
            u_min: u - h,
            v_min: v0,
            u_max: u + h,
            v_max: v1,
        }
    }
}

/// Semantic-mask grounding: the tightest box over columns showing
/// `target_label`, else a box on the deepest column at least 2 m away.
pub fn oracle_vis_decide(view: &View, target_label: Option<u32>) -> Result<VisDecision, AgentError> {
    if let Some(lab) = target_label {
        let cols: Vec<u32> = (0..view.width()).filter(|&u| view.label_cols[u as usize] == lab).collect();
        if let (Some(&a), Some(&b)) = (cols.first(), cols.last()) {
            let (v0, v1) = (view.band.0, view.band.1 - 1);
            let select = if a == b {
                VisSelect::Point { u: a, v: (v0 + v1) / 2 }
            } else {
                VisSelect::BBox {
                    u_min: a,
                    v_min: v0,
                    u_max: b,
                    v_max: v1,
                }
            };
            return Ok(VisDecision {
                select,
                target_desc: "the target object".into(),
            });
        }
    }
    let best = (0..view.width())
        .filter(|&u| view.depth_cols[u as usize] >= DISTAL_MIN_M && view.depth_cols[u as usize].is_finite())
        .max_by(|&a, &b| view.depth_cols[a as usize].total_cmp(&view.depth_cols[b as usize]).then(b.cmp(&a)))
        .ok_or(AgentError::GroundingFailed)?;
    Ok(VisDecision {
        select: box_at(view, best),
        target_desc: "distant free space".into(),
    })
}

impl Truth {
    fn new(world: Arc<WorldModel>) -> Self {
        Truth {
            world,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn n_subgoals(&self) -> usize {
        self.world.task.ordered_subgoals.len()
    }

    fn points(&self, t: Target) -> Vec<Point3> {
        match t {
            Target::Subgoal(i) => vec![self.world.task.ordered_subgoals[i].position],
            Target::Goal => self.world.task.goal_positions.clone(),
        }
    }

    fn radius(&self, t: Target) -> f64 {
        match t {
            Target::Subgoal(i) => self.world.task.subgoal_radius_at(i),
            Target::Goal => self.world.task.success_radius,
        }
    }

    fn is_final(&self, t: Target) -> bool {
        match t {
            Target::Subgoal(i) => i + 1 == self.n_subgoals(),
            Target::Goal => true,
        }
    }

    fn fields(&self, t: Target) -> Arc<Fields> {
        let mut cache = self.cache.lock().expect("oracle cache poisoned");
        cache
            .entry(t)
            .or_insert_with(|| {
                let pts = self.points(t);
                Arc::new(Fields {
                    plain: GeodesicField::build(&self.world, &pts, 0.0),
                    inflated: GeodesicField::build(&self.world, &pts, crate::planner::GROUND_INFLATION_M),
                })
            })
            .clone()
    }

    fn distance(&self, t: Target, pose: &Pose) -> f64 {
        self.fields(t).plain.pose_distance(pose)
    }

    fn within(&self, t: Target, pose: &Pose) -> bool {
        self.distance(t, pose) <= self.radius(t)
    }

    /// Ordered sub-goals reached in sequence along the pose history.
    fn progress(&self, history: &[Pose]) -> usize {
        let n = self.n_subgoals();
        let mut k = 0;
        for p in history {
            while k < n && self.within(Target::Subgoal(k), p) {
                k += 1;
            }
        }
        k
    }

    fn steer(&self, t: Target, pose: &Pose) -> Steer {
        let here = pose.position();
        if self.world.is_aerial() {
            let aim = self
                .points(t)
                .into_iter()
                .min_by(|a, b| here.distance_unchecked(a).total_cmp(&here.distance_unchecked(b)))
                .unwrap_or(here);
            return Steer {
                dir: sector_of(bearing_deg(pose, &aim) - pose.yaw),
                aim,
                landing: true,
                stair: None,
            };
        }
        let fields = self.fields(t);
        let cell = self.world.cell(pose.x, pose.y);
        let usable = |df: &&DistanceField| df.value(cell).is_finite();
        let df = fields.inflated.floor_field(pose.floor).filter(usable);
        let Some(df) = df.or_else(|| fields.plain.floor_field(pose.floor).filter(usable)) else {
            return Steer {
                dir: ViewDir::Front,
                aim: here,
                landing: true,
                stair: None,
            };
        };
        let cells = descent_cells(df, cell).unwrap_or_else(|_| vec![cell]);
        let end = *cells.last().expect("descent includes start");
        let is_target_seed = self
            .points(t)
            .iter()
            .any(|p| self.world.floor_of(p) == pose.floor && self.world.cell(p.x, p.y) == end);
        let stair = if is_target_seed {
            None
        } else {
            self.world
                .stair_links()
                .iter()
                .filter_map(|l| l.from_floor(pose.floor))
                .find(|(h, _)| h.1 == end)
                .map(|(_, there)| if there.0 > pose.floor { StairDir::Up } else { StairDir::Down })
        };
        let center = |c: [i64; 2]| {
            let m = self.world.cell_center(c);
            Point3::world(m[0], m[1], here.z)
        };
        let mut best = 0;
        for (i, c) in cells.iter().enumerate().skip(1) {
            let p = center(*c);
            if p.planar_distance(&here).unwrap_or(f64::INFINITY) > AIM_RANGE_M {
                break;
            }
            if segment_free(&self.world, &here, &p, pose.floor) {
                best = i;
            }
        }
        let aim = if best == 0 { here } else { center(cells[best]) };
        let dir = if best == 0 {
            ViewDir::Front
        } else {
            sector_of(bearing_deg(pose, &aim) - pose.yaw)
        };
        Steer {
            dir,
            aim,
            landing: best + 1 == cells.len() && (stair.is_some() || self.is_final(t)),
            stair,
        }
    }

    /// The earlier same-floor waypoint closest to the target, if the agent has
    /// since lost more than [`REGRESSION_M`] against it. Among waypoints within
    /// [`REGRESSION_TIE_M`] of the best, the latest wins.
    fn regression(&self, t: Target, pose: &Pose, waypoints: &[(u64, Pose)]) -> Option<(u64, f64)> {
        let now = self.distance(t, pose);
        if !now.is_finite() {
            return None;
        }
        let scored: Vec<(u64, f64)> = waypoints
            .iter()
            .filter(|(_, p)| p.floor == pose.floor)
            .map(|(id, p)| (*id, self.distance(t, p)))
            .filter(|(_, d)| d.is_finite())
            .collect();
        let best = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        if now - best <= REGRESSION_M {
            return None;
        }
        scored
            .iter()
            .rev()
            .find(|s| s.1 <= best + REGRESSION_TIE_M)
            .map(|&(id, d)| (id, now - d))
    }

    fn turn_or_stair(&self, t: Target, pose: &Pose) -> (LangAction, String) {
        let s = self.steer(t, pose);
        if let Some(sd) = s.stair {
            if nearby_stair(&self.world, pose, sd == StairDir::Up).is_some() {
                return (
                    LangAction::GoStair { direction: sd },
                    format!("standing at the stairs, going {} {}", sd.as_str(), t.marker()),
                );
            }
        }
        let d = self.distance(t, pose);
        (
            LangAction::Turn { direction: s.dir },
            format!("the route continues {}, {d:.1} m to go {}", s.dir, t.marker()),
        )
    }

    fn stop_action(&self) -> LangAction {
        let answer = match self.world.task.family {
            TaskFamily::Eqa => self.world.task.eqa_answer.clone(),
            _ => None,
        };
        LangAction::DoubleCheck { stop: true, answer }
    }

    fn plan_items(&self) -> Vec<String> {
        let task = &self.world.task;
        if task.ordered_subgoals.is_empty() {
            vec![task.instruction.clone()]
        } else {
            task.ordered_subgoals.iter().map(|s| s.description.clone()).collect()
        }
    }

    /// Checklist item index for ordered sub-goal `k`, matched by wording.
    fn subgoal_of_item(&self, list: &TodoList, item: usize) -> usize {
        let content = &list.items[item].content;
        self.world
            .task
            .ordered_subgoals
            .iter()
            .position(|s| &s.description == content)
            .unwrap_or(item)
    }

    fn vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        let dir = ctx
            .chosen_dir
            .ok_or_else(|| BackendError::Malformed("vision call without a chosen view".into()))?;
        let view = ctx
            .panorama
            .and_then(|p| p.view(dir))
            .ok_or_else(|| BackendError::Malformed(format!("no {dir} view in context")))?;
        let target = payload
            .text_blocks
            .iter()
            .find_map(|b| Target::find_in(b))
            .unwrap_or(Target::Goal);
        let target = match target {
            Target::Subgoal(i) if i >= self.n_subgoals() => Target::Goal,
            t => t,
        };
        let pose = &ctx.pose;
        let s = self.steer(target, pose);
        let k = &view.intrinsics;
        let axis = pose.yaw + dir.yaw_offset();
        let rel = wrap180(bearing_deg(pose, &s.aim) - axis);
        let hit = |u: u32| -> Option<Point3> {
            let r = view.column_range(u)?;
            let ray = column_ray(pose, dir, u as f64, k);
            Some(Point3::world(pose.x + r * ray[0], pose.y + r * ray[1], pose.z + r * ray[2]))
        };
        let ray_rel = |u: u32| {
            let ray = column_ray(pose, dir, u as f64, k);
            wrap180(ray[1].atan2(ray[0]).to_degrees() - axis)
        };
        let finite: Vec<u32> = (0..view.width()).filter(|&u| view.depth_cols[u as usize].is_finite()).collect();
        let here = pose.position();
        let on_target = s.aim.planar_distance(&here).unwrap_or(0.0) > 1e-9 && rel.abs() <= 46.0;
        let chosen = if self.world.is_aerial() {
            self.aerial_column(view, &s.aim, pose, rel, &ray_rel)
        } else if !on_target {
            match oracle_vis_decide(view, None) {
                Ok(d) => return Ok(d.to_json()),
                Err(_) => finite.first().copied(),
            }
        } else if s.landing {
            finite.iter().copied().min_by(|&a, &b| {
                let da = hit(a).map_or(f64::INFINITY, |p| p.planar_distance(&s.aim).unwrap_or(f64::INFINITY));
                let db = hit(b).map_or(f64::INFINITY, |p| p.planar_distance(&s.aim).unwrap_or(f64::INFINITY));
                da.total_cmp(&db).then(a.cmp(&b))
            })
        } else {
            // Closest in angle to the aim, preferring columns that see past
            // it, then columns that at least clear half the way.
            let aim_dist = s.aim.planar_distance(&here).unwrap_or(0.0);
            let by_angle = |a: &u32, b: &u32| (ray_rel(*a) - rel).abs().total_cmp(&(ray_rel(*b) - rel).abs()).then(a.cmp(b));
            let clear = |reach: f64| {
                finite
                    .iter()
                    .copied()
                    .filter(|&u| (ray_rel(u) - rel).abs() <= CLEAR_WINDOW_DEG && view.column_range(u).is_some_and(|r| r >= reach))
                    .min_by(by_angle)
            };
            clear(aim_dist)
                .or_else(|| clear(0.5 * aim_dist))
                .or_else(|| finite.iter().copied().min_by(by_angle))
        };
        let u = chosen.unwrap_or(view.width() / 2);
        let d = VisDecision {
            select: box_at(view, u),
            target_desc: if s.landing { "the goal area" } else { "the way ahead" }.into(),
        };
        Ok(d.to_json())
    }

    /// Column toward the aim for aerial agents. Selects an obstacle face in
    /// the way, else open sky so grounding falls back to the goal bearing.
    fn aerial_column(&self, view: &View, aim: &Point3, pose: &Pose, rel: f64, ray_rel: &dyn Fn(u32) -> f64) -> Option<u32> {
        let by_angle = |cands: &mut dyn Iterator<Item = u32>| {
            cands.min_by(|&a, &b| (ray_rel(a) - rel).abs().total_cmp(&(ray_rel(b) - rel).abs()).then(a.cmp(&b)))
        };
        let u = by_angle(&mut (0..view.width()))?;
        let dist = aim.distance_unchecked(&pose.position());
        match view.column_range(u) {
            Some(r) if r < dist => Some(u),
            _ => by_angle(&mut (0..view.width()).filter(|&c| !view.depth_cols[c as usize].is_finite())).or(Some(u)),
        }
    }

    fn verify_json(confirm: bool, reasoning: &str) -> String {
        json!({"confirm": if confirm { "yes" } else { "no" }, "reasoning": reasoning}).to_string()
    }
}

fn checklist(payload: &PromptPayload) -> Option<TodoList> {
    payload.checklist_text().and_then(|t| parse_rendered(t).ok())
}

fn complete(index: usize, result: String) -> TodoUpdateOp {
    TodoUpdateOp::Update {
        index: index + 1,
        status: TodoStatus::Completed,
        result,
    }
}

/// Ground-truth backend: plans on the true map, tracks sub-goal progress from
/// the pose history, and keeps any checklist in the prompt up to date.
pub struct OracleBackend {
    truth: Truth,
}

impl OracleBackend {
    pub fn new(world: Arc<WorldModel>) -> Self {
        OracleBackend {
            truth: Truth::new(world),
        }
    }

    fn navigate(&self, payload: &PromptPayload, ctx: &DecisionContext) -> LangDecision {
        let tr = &self.truth;
        let n = tr.n_subgoals();
        let progress = tr.progress(ctx.pose_history);
        let list = checklist(payload);
        let mut todo_ops = vec![];
        let at_goal = progress == n && tr.within(Target::Goal, &ctx.pose);
        if let Some(list) = &list {
            for (i, it) in list.items.iter().enumerate() {
                if it.status != TodoStatus::Pending {
                    continue;
                }
                let done = if n == 0 { at_goal } else { tr.subgoal_of_item(list, i) < progress };
                if done {
                    todo_ops.push(complete(i, format!("reached: {}", it.content)));
                }
            }
        }
        let progress_analysis = format!("{progress} of {n} ordered sub-goals reached");
        let t = if progress < n { Target::Subgoal(progress) } else { Target::Goal };
        let (action, reasoning_action) = if at_goal {
            (tr.stop_action(), "the goal is within reach, asking to stop [target: goal]".to_string())
        } else if let Some((id, lost)) = tr.regression(t, &ctx.pose, ctx.waypoints) {
            (
                LangAction::Backtrack { waypoint_id: id },
                format!("{lost:.1} m further from the target than at waypoint {id}, going back {}", t.marker()),
            )
        } else {
            tr.turn_or_stair(t, &ctx.pose)
        };
        LangDecision {
            progress_analysis,
            reasoning_todo: if list.is_some() {
                format!("{} checklist items newly satisfied", todo_ops.len())
            } else {
                String::new()
            },
            todo_ops,
            reasoning_action,
            action,
        }
    }
}

impl DecisionBackend for OracleBackend {
    fn decide_lang(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        let tr = &self.truth;
        match ctx.kind {
            CallKind::Init => Ok(json!({"subgoals": tr.plan_items()}).to_string()),
            CallKind::Verify => {
                let ok = tr.progress(ctx.pose_history) == tr.n_subgoals() && tr.within(Target::Goal, &ctx.pose);
                Ok(Truth::verify_json(ok, "checked the distance to the goal"))
            }
            CallKind::Navigate | CallKind::Recover => Ok(self.navigate(payload, ctx).to_json()),
            CallKind::Vision => Err(BackendError::Malformed("vision call on the language channel".into())),
        }
    }

    fn decide_vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        self.truth.vis(payload, ctx)
    }

    fn name(&self) -> String {
        "oracle".into()
    }
}

/// Oracle without memory of its own progress. It sees which sub-goals are
/// done only through a checklist in the prompt; without one it heads for the
/// nearest sub-goal and asks to stop at any sub-goal it reaches.
pub struct ForgetfulOracle {
    truth: Truth,
}

impl ForgetfulOracle {
    pub fn new(world: Arc<WorldModel>) -> Self {
        ForgetfulOracle {
            truth: Truth::new(world),
        }
    }

    fn nearest_subgoal(&self, pose: &Pose) -> Option<usize> {
        (0..self.truth.n_subgoals()).min_by(|&a, &b| {
            self.truth
                .distance(Target::Subgoal(a), pose)
                .total_cmp(&self.truth.distance(Target::Subgoal(b), pose))
                .then(a.cmp(&b))
        })
    }

    fn navigate(&self, payload: &PromptPayload, ctx: &DecisionContext) -> LangDecision {
        let tr = &self.truth;
        let pose = &ctx.pose;
        if tr.n_subgoals() == 0 {
            let (action, why) = if tr.within(Target::Goal, pose) {
                (tr.stop_action(), "at the goal [target: goal]".to_string())
            } else {
                tr.turn_or_stair(Target::Goal, pose)
            };
            return LangDecision {
                progress_analysis: String::new(),
                reasoning_todo: String::new(),
                todo_ops: vec![],
                reasoning_action: why,
                action,
            };
        }
        let mut todo_ops = vec![];
        let (action, why, analysis) = match checklist(payload) {
            Some(list) => {
                // Passing through a landmark counts, not only ending a round in it.
                let reached = tr.progress(ctx.pose_history);
                let mut next = list.first_pending();
                while let Some(i) = next {
                    let k = tr.subgoal_of_item(&list, i);
                    if k >= reached {
                        break;
                    }
                    todo_ops.push(complete(i, format!("reached: {}", list.items[i].content)));
                    next = (i + 1..list.items.len()).find(|&j| list.items[j].status == TodoStatus::Pending);
                }
                let analysis = format!("checklist shows {} items done", list.completed_count() + todo_ops.len());
                match next {
                    None => (tr.stop_action(), "every checklist item is done [target: goal]".into(), analysis),
                    Some(i) => {
                        let k = tr.subgoal_of_item(&list, i).min(tr.n_subgoals() - 1);
                        let (a, w) = tr.turn_or_stair(Target::Subgoal(k), pose);
                        (a, w, analysis)
                    }
                }
            }
            None => {
                let k = self.nearest_subgoal(pose).expect("has sub-goals");
                if tr.within(Target::Subgoal(k), pose) {
                    (
                        tr.stop_action(),
                        format!("this matches a landmark of the instruction {}", Target::Subgoal(k).marker()),
                        "a described landmark is here".into(),
                    )
                } else {
                    let (a, w) = tr.turn_or_stair(Target::Subgoal(k), pose);
                    (a, w, "heading for the closest described landmark".into())
                }
            }
        };
        LangDecision {
            progress_analysis: analysis,
            reasoning_todo: String::new(),
            todo_ops,
            reasoning_action: why,
            action,
        }
    }

    fn verify(&self, payload: &PromptPayload, pose: &Pose) -> bool {
        let tr = &self.truth;
        let n = tr.n_subgoals();
        if n == 0 {
            return tr.within(Target::Goal, pose);
        }
        match checklist(payload) {
            Some(list) => {
                let last = list.items.len().saturating_sub(1);
                let earlier_done = list.items[..last].iter().all(|it| it.status == TodoStatus::Completed);
                earlier_done && tr.within(Target::Subgoal(n - 1), pose)
            }
            None => (0..n).any(|k| tr.within(Target::Subgoal(k), pose)),
        }
    }
}

impl DecisionBackend for ForgetfulOracle {
    fn decide_lang(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        match ctx.kind {
            CallKind::Init => Ok(json!({"subgoals": self.truth.plan_items()}).to_string()),
            CallKind::Verify => Ok(Truth::verify_json(
                self.verify(payload, &ctx.pose),
                "compared the view with the instruction",
            )),
            CallKind::Navigate | CallKind::Recover => Ok(self.navigate(payload, ctx).to_json()),
            CallKind::Vision => Err(BackendError::Malformed("vision call on the language channel".into())),
        }
    }

    fn decide_vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        self.truth.vis(payload, ctx)
    }

    fn name(&self) -> String {
        "forgetful-oracle".into()
    }
}
