//! Discrete action execution and ground-truth goal distances.

use serde::{Deserialize, Serialize};

use super::{Layout, WorldError, WorldModel};
use crate::geometry::{normalize_deg, sin_cos_deg, Point3, Pose};
use crate::planner::{fmm_field_multi, DistanceField, PlanGrid};

pub const FORWARD_STEP_M: f64 = 0.25;
pub const TURN_STEP_DEG: f64 = 30.0;
/// Longest straight segment a single aerial move may cover.
pub const MAX_FLY_SEGMENT_M: f64 = 5.0;
/// Planar distance from a stair endpoint within which the stairs can be taken.
pub const STAIR_REACH_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowLevelAction {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose,
    pub collided_last_step: bool,
    pub stopped: bool,
}

impl AgentState {
    pub fn new(pose: Pose) -> Self {
        AgentState {
            pose,
            collided_last_step: false,
            stopped: false,
        }
    }
}

/// Checks the straight segment `a -> b` against the true map by sampling at
/// quarter-cell spacing. Returns the fraction of the segment that is free
/// before the first blocked sample (1.0 when the whole segment is free).
fn free_fraction(world: &WorldModel, a: &Point3, b: &Point3, floor: usize) -> f64 {
    let len = a.distance_unchecked(b);
    let n = ((len / (world.resolution * 0.25)).ceil() as usize).max(1);
    let mut last_free = 0.0;
    for s in 0..=n {
        let t = s as f64 / n as f64;
        let p = Point3::world(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, a.z + (b.z - a.z) * t);
        if !world.is_free_point(&p, floor) {
            return last_free;
        }
        last_free = t;
    }
    1.0
}

/// True when the straight segment is free on the true map.
pub fn segment_free(world: &WorldModel, a: &Point3, b: &Point3, floor: usize) -> bool {
    free_fraction(world, a, b, floor) >= 1.0
}

/// The stair link endpoint on the pose's floor that leads one floor up (or
/// down) and lies within [`STAIR_REACH_M`], nearest first.
pub fn nearby_stair(world: &WorldModel, pose: &Pose, up: bool) -> Option<((usize, [i64; 2]), (usize, [i64; 2]))> {
    world
        .stair_links()
        .iter()
        .filter_map(|l| l.from_floor(pose.floor))
        .filter(|(_, there)| if up { there.0 == pose.floor + 1 } else { there.0 + 1 == pose.floor })
        .map(|(here, there)| {
            let c = world.cell_center(here.1);
            ((c[0] - pose.x).hypot(c[1] - pose.y), here, there)
        })
        .filter(|(d, _, _)| *d <= STAIR_REACH_M)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, here, there)| (here, there))
}

/// Pose after taking the stairs: the far endpoint's cell center, same yaw.
pub fn stair_transition(world: &WorldModel, pose: &Pose, up: bool) -> Option<Pose> {
    let (_, (floor, cell)) = nearby_stair(world, pose, up)?;
    let c = world.cell_center(cell);
    Some(Pose {
        x: c[0],
        y: c[1],
        z: world.floor_z(floor),
        yaw: pose.yaw,
        floor,
    })
}

pub fn step(world: &WorldModel, agent: &AgentState, a: LowLevelAction) -> Result<AgentState, WorldError> {
    if agent.stopped {
        return Err(WorldError::EpisodeTerminated);
    }
    let mut next = *agent;
    next.collided_last_step = false;
    match a {
        LowLevelAction::TurnLeft => next.pose.yaw = normalize_deg(agent.pose.yaw + TURN_STEP_DEG),
        LowLevelAction::TurnRight => next.pose.yaw = normalize_deg(agent.pose.yaw - TURN_STEP_DEG),
        LowLevelAction::Stop => next.stopped = true,
        LowLevelAction::MoveForward => {
            let (s, c) = sin_cos_deg(agent.pose.yaw);
            let from = agent.pose.position();
            let to = from.offset([FORWARD_STEP_M * c, FORWARD_STEP_M * s, 0.0]);
            if free_fraction(world, &from, &to, agent.pose.floor) < 1.0 {
                next.collided_last_step = true;
            } else {
                next.pose.x = to.x;
                next.pose.y = to.y;
            }
        }
    }
    Ok(next)
}

/// Moves an aerial agent straight toward `target`, at most
/// [`MAX_FLY_SEGMENT_M`]. The move stops short at the last free sample when
/// the segment is obstructed. Yaw follows the horizontal motion direction.
pub fn fly_to(world: &WorldModel, agent: &AgentState, target: &Point3) -> Result<AgentState, WorldError> {
    if agent.stopped {
        return Err(WorldError::EpisodeTerminated);
    }
    let from = agent.pose.position();
    let d = from.distance_unchecked(target);
    let target = if d > MAX_FLY_SEGMENT_M {
        let s = MAX_FLY_SEGMENT_M / d;
        from.offset([(target.x - from.x) * s, (target.y - from.y) * s, (target.z - from.z) * s])
    } else {
        Point3::world(target.x, target.y, target.z)
    };
    let f = free_fraction(world, &from, &target, agent.pose.floor);
    let end = from.offset([(target.x - from.x) * f, (target.y - from.y) * f, (target.z - from.z) * f]);
    let mut next = *agent;
    next.collided_last_step = f < 1.0;
    let (dx, dy) = (end.x - from.x, end.y - from.y);
    if dx.hypot(dy) > 1e-9 {
        next.pose.yaw = normalize_deg(dy.atan2(dx).to_degrees());
    }
    next.pose.x = end.x;
    next.pose.y = end.y;
    next.pose.z = end.z;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalStatus {
    pub distance: f64,
    pub within_radius: bool,
}

/// Geodesic distance to a set of target points on the true map. Ground worlds
/// get one Fast Marching field per floor, coupled through stair links at a
/// cost of one floor height per transition. Aerial worlds use straight-line
/// distance.
#[derive(Debug, Clone)]
pub struct GeodesicField {
    fields: Vec<DistanceField>,
    targets: Vec<Point3>,
    aerial: bool,
}

impl GeodesicField {
    pub fn build(world: &WorldModel, targets: &[Point3], inflation: f64) -> Self {
        let floors = match &world.layout {
            Layout::Aerial3d { .. } => {
                return GeodesicField {
                    fields: vec![],
                    targets: targets.to_vec(),
                    aerial: true,
                }
            }
            Layout::Ground2d { floors, .. } => floors,
        };
        let grids: Vec<PlanGrid> = floors
            .iter()
            .enumerate()
            .map(|(f, g)| {
                let blocked = g.occupancy().to_vec();
                PlanGrid::from_blocked(g.width, g.height, world.resolution, [0, 0], world.floor_z(f), blocked)
                    .inflate(inflation)
            })
            .collect();
        let mut base_seeds: Vec<Vec<([i64; 2], f64)>> = vec![vec![]; floors.len()];
        for t in targets {
            let f = world.floor_of(t);
            if f < floors.len() {
                base_seeds[f].push((world.cell(t.x, t.y), 0.0));
            }
        }
        let mut fields: Vec<DistanceField> = grids
            .iter()
            .zip(&base_seeds)
            .map(|(g, s)| fmm_field_multi(g, s))
            .collect();
        // Relax across stair links until no endpoint improves.
        for _ in 0..=floors.len() * 2 {
            let mut seeds = base_seeds.clone();
            for link in world.stair_links() {
                for (here, there) in [
                    ((link.floor_a, link.cell_a), (link.floor_b, link.cell_b)),
                    ((link.floor_b, link.cell_b), (link.floor_a, link.cell_a)),
                ] {
                    if here.0 >= fields.len() || there.0 >= fields.len() {
                        continue;
                    }
                    let v = fields[there.0].value(there.1) + world.floor_height;
                    if v.is_finite() {
                        seeds[here.0].push((here.1, v));
                    }
                }
            }
            let next: Vec<DistanceField> = grids.iter().zip(&seeds).map(|(g, s)| fmm_field_multi(g, s)).collect();
            let changed = next.iter().zip(&fields).any(|(a, b)| a.values != b.values);
            fields = next;
            if !changed {
                break;
            }
        }
        GeodesicField {
            fields,
            targets: targets.to_vec(),
            aerial: false,
        }
    }

    /// Field of the goal set of the world's task, without inflation.
    pub fn for_task(world: &WorldModel) -> Self {
        GeodesicField::build(world, &world.task.goal_positions, 0.0)
    }

    pub fn distance(&self, p: &Point3, floor: usize) -> f64 {
        if self.aerial {
            return self
                .targets
                .iter()
                .map(|t| p.distance_unchecked(t))
                .fold(f64::INFINITY, f64::min);
        }
        match self.fields.get(floor) {
            Some(f) => f.value_at(p.x, p.y),
            None => f64::INFINITY,
        }
    }

    pub fn pose_distance(&self, pose: &Pose) -> f64 {
        self.distance(&pose.position(), pose.floor)
    }

    pub fn floor_field(&self, floor: usize) -> Option<&DistanceField> {
        self.fields.get(floor)
    }

    pub fn status(&self, pose: &Pose, radius: f64) -> GoalStatus {
        let distance = self.pose_distance(pose);
        GoalStatus {
            distance,
            within_radius: distance <= radius,
        }
    }
}

/// Geodesic distance from `pose` to the nearest task goal on the true map.
/// Builds a fresh field; callers evaluating many poses should keep a
/// [`GeodesicField`] instead.
pub fn check_goal(world: &WorldModel, pose: &Pose) -> GoalStatus {
    GeodesicField::for_task(world).status(pose, world.task.success_radius)
}
