//! Deterministic ground-truth simulator.

mod generate;
mod grid;
mod io;
pub mod raycast;
mod render;
mod sim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Pose};

pub use generate::{generate_world, GeneratorSpec};
pub use grid::{SemanticGrid2D, StairLink, VoxelGrid, UNLABELED};
pub use io::{read_world, world_from_json, world_to_json, write_world, WORLD_FORMAT, WORLD_FORMAT_VERSION};
pub use render::{
    column_scale, render_panorama, render_view, render_view_at_offset, CameraSpec, DepthImage, PanoramaObservation,
    SemanticImage, View,
};
pub use sim::{
    check_goal, fly_to, nearby_stair, segment_free, stair_transition, step, AgentState, GeodesicField, GoalStatus,
    LowLevelAction, FORWARD_STEP_M, MAX_FLY_SEGMENT_M, STAIR_REACH_M, TURN_STEP_DEG,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("world generation failed: {0}")]
    GenerationFailed(String),
    #[error("invalid world file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "VLN")]
    Vln,
    ObjectNav,
    #[serde(rename = "EQA")]
    Eqa,
    AerialVLN,
}

impl TaskFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Vln => "VLN",
            TaskFamily::ObjectNav => "ObjectNav",
            TaskFamily::Eqa => "EQA",
            TaskFamily::AerialVLN => "AerialVLN",
        }
    }

    pub fn parse(s: &str) -> Option<TaskFamily> {
        match s.to_ascii_lowercase().as_str() {
            "vln" => Some(TaskFamily::Vln),
            "objectnav" => Some(TaskFamily::ObjectNav),
            "eqa" => Some(TaskFamily::Eqa),
            "aerialvln" | "aerial" | "uav" => Some(TaskFamily::AerialVLN),
            _ => None,
        }
    }

    /// Default success radius in meters.
    pub fn default_radius(self) -> f64 {
        match self {
            TaskFamily::Vln => 3.0,
            TaskFamily::ObjectNav | TaskFamily::Eqa => 1.0,
            TaskFamily::AerialVLN => 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgoal {
    pub description: String,
    pub position: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub instruction: String,
    pub start: Pose,
    pub goal_positions: Vec<Point3>,
    pub success_radius: f64,
    /// Radius within which an intermediate ordered subgoal counts as reached.
    #[serde(default = "default_subgoal_radius")]
    pub subgoal_radius: f64,
    /// Ordered landmarks; the last entry is the goal itself.
    #[serde(default)]
    pub ordered_subgoals: Vec<Subgoal>,
    #[serde(default)]
    pub target_label: Option<String>,
    #[serde(default)]
    pub eqa_answer: Option<String>,
    /// Aerial only: unit direction to the goal in the start heading frame
    /// (x forward, y left, z up).
    #[serde(default)]
    pub goal_bearing: Option<[f64; 3]>,
}

fn default_subgoal_radius() -> f64 {
    1.0
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.success_radius > 0.0) {
            return Err(WorldError::Format("success_radius must be positive".into()));
        }
        if self.goal_positions.is_empty() {
            return Err(WorldError::Format("task has no goal positions".into()));
        }
        if self.family == TaskFamily::Eqa && self.eqa_answer.is_none() {
            return Err(WorldError::Format("EQA task without an answer".into()));
        }
        if self.family == TaskFamily::Vln && self.ordered_subgoals.is_empty() {
            return Err(WorldError::Format("VLN task without ordered subgoals".into()));
        }
        Ok(())
    }

    /// Radius for reaching subgoal `i`; the final subgoal uses the success radius.
    pub fn subgoal_radius_at(&self, i: usize) -> f64 {
        if i + 1 == self.ordered_subgoals.len() {
            self.success_radius
        } else {
            self.subgoal_radius
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    Ground2d {
        floors: Vec<SemanticGrid2D>,
        stair_links: Vec<StairLink>,
    },
    Aerial3d {
        voxels: VoxelGrid,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub name: String,
    pub resolution: f64,
    pub floor_height: f64,
    pub labels: BTreeMap<u32, String>,
    pub layout: Layout,
    pub camera: CameraSpec,
    pub task: TaskSpec,
}

impl WorldModel {
    pub fn is_aerial(&self) -> bool {
        matches!(self.layout, Layout::Aerial3d { .. })
    }

    pub fn floors(&self) -> &[SemanticGrid2D] {
        match &self.layout {
            Layout::Ground2d { floors, .. } => floors,
            Layout::Aerial3d { .. } => &[],
        }
    }

    pub fn stair_links(&self) -> &[StairLink] {
        match &self.layout {
            Layout::Ground2d { stair_links, .. } => stair_links,
            Layout::Aerial3d { .. } => &[],
        }
    }

    pub fn voxels(&self) -> Option<&VoxelGrid> {
        match &self.layout {
            Layout::Aerial3d { voxels } => Some(voxels),
            Layout::Ground2d { .. } => None,
        }
    }

    pub fn label_text(&self, id: u32) -> Option<&str> {
        self.labels.get(&id).map(String::as_str)
    }

    pub fn label_id(&self, text: &str) -> Option<u32> {
        self.labels.iter().find(|(_, t)| t.eq_ignore_ascii_case(text)).map(|(id, _)| *id)
    }

    pub fn cell(&self, x: f64, y: f64) -> [i64; 2] {
        [raycast::cell_of(x, self.resolution), raycast::cell_of(y, self.resolution)]
    }

    pub fn voxel(&self, p: &Point3) -> [i64; 3] {
        [
            raycast::cell_of(p.x, self.resolution),
            raycast::cell_of(p.y, self.resolution),
            raycast::cell_of(p.z, self.resolution),
        ]
    }

    pub fn cell_center(&self, c: [i64; 2]) -> [f64; 2] {
        [(c[0] as f64 + 0.5) * self.resolution, (c[1] as f64 + 0.5) * self.resolution]
    }

    /// Floor index a ground-world point belongs to.
    pub fn floor_of(&self, p: &Point3) -> usize {
        if self.floor_height > 0.0 {
            (p.z / self.floor_height).round().max(0.0) as usize
        } else {
            0
        }
    }

    pub fn floor_z(&self, floor: usize) -> f64 {
        floor as f64 * self.floor_height
    }

    pub fn validate_pose(&self, pose: &Pose) -> Result<(), WorldError> {
        if !(pose.x.is_finite() && pose.y.is_finite() && pose.z.is_finite()) {
            return Err(WorldError::InvalidPose("non-finite coordinates".into()));
        }
        match &self.layout {
            Layout::Ground2d { floors, .. } => {
                let grid = floors
                    .get(pose.floor)
                    .ok_or_else(|| WorldError::InvalidPose(format!("floor {} does not exist", pose.floor)))?;
                let c = self.cell(pose.x, pose.y);
                if !grid.in_bounds(c[0], c[1]) || grid.is_occupied(c[0], c[1]) {
                    return Err(WorldError::InvalidPose(format!("({:.3}, {:.3}) is not a free cell", pose.x, pose.y)));
                }
            }
            Layout::Aerial3d { voxels } => {
                if !voxels.is_free(self.voxel(&pose.position())) {
                    return Err(WorldError::InvalidPose(format!(
                        "({:.3}, {:.3}, {:.3}) is not a free voxel",
                        pose.x, pose.y, pose.z
                    )));
                }
            }
        }
        Ok(())
    }

    /// True-map free test for a world point on a given floor (ground) or in
    /// the voxel volume (aerial).
    pub fn is_free_point(&self, p: &Point3, floor: usize) -> bool {
        match &self.layout {
            Layout::Ground2d { floors, .. } => {
                let c = self.cell(p.x, p.y);
                floors.get(floor).is_some_and(|g| g.is_free(c[0], c[1]))
            }
            Layout::Aerial3d { voxels } => voxels.is_free(self.voxel(p)),
        }
    }

    /// Stable content hash of the serialized world.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = world_to_json(self);
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Incremental construction of hand-made ground worlds, mostly for fixtures.
#[derive(Debug, Clone)]
pub struct GroundWorldBuilder {
    resolution: f64,
    floor_height: f64,
    floors: Vec<SemanticGrid2D>,
    stair_links: Vec<StairLink>,
    labels: BTreeMap<u32, String>,
}

impl GroundWorldBuilder {
    pub fn new(width_m: f64, height_m: f64, resolution: f64, floors: usize) -> Self {
        let w = (width_m / resolution).round() as usize;
        let h = (height_m / resolution).round() as usize;
        let mut labels = BTreeMap::new();
        labels.insert(1, "wall".to_string());
        GroundWorldBuilder {
            resolution,
            floor_height: 3.0,
            floors: (0..floors.max(1)).map(|_| SemanticGrid2D::new(w, h)).collect(),
            stair_links: vec![],
            labels,
        }
    }

    pub fn label(&mut self, text: &str) -> u32 {
        if let Some((id, _)) = self.labels.iter().find(|(_, t)| *t == text) {
            return *id;
        }
        let id = self.labels.keys().max().copied().unwrap_or(0) + 1;
        self.labels.insert(id, text.to_string());
        id
    }

    fn cells(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> (i64, i64, i64, i64) {
        let r = self.resolution;
        (
            (x0 / r).round() as i64,
            (y0 / r).round() as i64,
            (x1 / r).round() as i64,
            (y1 / r).round() as i64,
        )
    }

    /// Occupied rectangle `[x0, x1) x [y0, y1)` in meters.
    pub fn block(&mut self, floor: usize, x0: f64, y0: f64, x1: f64, y1: f64, label: &str) -> &mut Self {
        let id = self.label(label);
        let (i0, j0, i1, j1) = self.cells(x0, y0, x1, y1);
        self.floors[floor].fill_rect(i0, j0, i1, j1, true, id);
        self
    }

    pub fn clear(&mut self, floor: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> &mut Self {
        let (i0, j0, i1, j1) = self.cells(x0, y0, x1, y1);
        self.floors[floor].fill_rect(i0, j0, i1, j1, false, UNLABELED);
        self
    }

    /// Walls of the given thickness around the whole extent.
    pub fn outer_walls(&mut self, thickness: f64) -> &mut Self {
        let r = self.resolution;
        let (w, h) = (self.floors[0].width as f64 * r, self.floors[0].height as f64 * r);
        for f in 0..self.floors.len() {
            self.block(f, 0.0, 0.0, w, thickness, "wall");
            self.block(f, 0.0, h - thickness, w, h, "wall");
            self.block(f, 0.0, 0.0, thickness, h, "wall");
            self.block(f, w - thickness, 0.0, w, h, "wall");
        }
        self
    }

    pub fn stair(&mut self, floor_a: usize, a: (f64, f64), floor_b: usize, b: (f64, f64)) -> &mut Self {
        let r = self.resolution;
        self.stair_links.push(StairLink {
            floor_a,
            cell_a: [(a.0 / r).floor() as i64, (a.1 / r).floor() as i64],
            floor_b,
            cell_b: [(b.0 / r).floor() as i64, (b.1 / r).floor() as i64],
        });
        self
    }

    pub fn build(&self, name: &str, task: TaskSpec) -> WorldModel {
        WorldModel {
            name: name.to_string(),
            resolution: self.resolution,
            floor_height: self.floor_height,
            labels: self.labels.clone(),
            layout: Layout::Ground2d {
                floors: self.floors.clone(),
                stair_links: self.stair_links.clone(),
            },
            camera: CameraSpec::ground(),
            task,
        }
    }
}
