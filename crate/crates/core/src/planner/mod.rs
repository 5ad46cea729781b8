//! Geometric planning on the belief map.

mod fmm;
mod uav;
mod vis3d;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Pose};
use crate::mapping::{CellState, OccupancyGrid};

pub use fmm::{decimate, descent_cells, extract_path, fmm_field, fmm_field_multi, fmm_solve, DistanceField, PlanGrid};
pub use uav::{direction_constrained_waypoint, heading_frame_to_world, AERIAL_CORRIDOR, MAX_UAV_HOP_M};
pub use vis3d::{plan_3d, plan_3d_on, segment_clear, VoxelPlanGrid};

/// Robot radius used to dilate obstacles for ground planning.
pub const GROUND_INFLATION_M: f64 = 0.18;
pub const AERIAL_INFLATION_M: f64 = 0.5;
/// How far an occupied target may be moved to the nearest traversable cell.
pub const RETARGET_RADIUS_M: f64 = 1.0;
const PLAN_MARGIN_CELLS: i64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PlanError {
    #[error("source lies inside an obstacle")]
    SourceBlocked,
    #[error("target is unreachable")]
    Unreachable,
    #[error("no traversable cell near the target")]
    NoNearbyTraversable,
    #[error("obstacle too close ahead")]
    BlockedAhead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Point3>,
    pub length: f64,
}

impl Path {
    pub fn from_points(waypoints: Vec<Point3>) -> Self {
        let length = waypoints.windows(2).map(|w| w[0].distance_unchecked(&w[1])).sum();
        Path { waypoints, length }
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn end(&self) -> Option<&Point3> {
        self.waypoints.last()
    }
}

/// Traversability grid for one floor of the belief map covering the known
/// area plus the given extra cells, with occupied cells dilated by
/// `inflation`. Unknown cells are traversable.
pub fn belief_plan_grid(map: &OccupancyGrid, floor: usize, z: f64, include: &[[i64; 2]], inflation: f64) -> PlanGrid {
    let mut lo = [i64::MAX; 2];
    let mut hi = [i64::MIN; 2];
    let layer = map.layer(floor);
    if let Some((l, h)) = layer.and_then(|l| l.known_bbox()) {
        lo = l;
        hi = h;
    }
    for c in include {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let origin = [lo[0] - PLAN_MARGIN_CELLS, lo[1] - PLAN_MARGIN_CELLS];
    let w = (hi[0] - lo[0] + 1 + 2 * PLAN_MARGIN_CELLS) as usize;
    let h = (hi[1] - lo[1] + 1 + 2 * PLAN_MARGIN_CELLS) as usize;
    let mut grid = PlanGrid::new(w, h, map.resolution, origin, z);
    if let Some(layer) = layer {
        for (c, s) in layer.known_cells() {
            if s == CellState::Occupied {
                grid.set_blocked(c, true);
            }
        }
    }
    grid.inflate(inflation)
}

/// Plans on the belief map from `start` to `target` on the start floor.
/// Inflation around the start cell is cleared so an agent hugging a wall can
/// still leave. An obstructed target is moved to the nearest reachable
/// traversable cell within [`RETARGET_RADIUS_M`].
pub fn plan_to(map: &OccupancyGrid, start: &Pose, target: &Point3) -> Result<Path, PlanError> {
    plan_to_inflated(map, start, target, GROUND_INFLATION_M)
}

pub fn plan_to_inflated(map: &OccupancyGrid, start: &Pose, target: &Point3, inflation: f64) -> Result<Path, PlanError> {
    let res = map.resolution;
    let cell = |x: f64, y: f64| [(x / res).floor() as i64, (y / res).floor() as i64];
    let sc = cell(start.x, start.y);
    let tc = cell(target.x, target.y);
    let reach = (RETARGET_RADIUS_M / res).ceil() as i64;
    let include = [sc, [tc[0] - reach, tc[1] - reach], [tc[0] + reach, tc[1] + reach]];
    let mut grid = belief_plan_grid(map, start.floor, start.z, &include, inflation);
    let r = (inflation / res - 1e-9).ceil().max(0.0) as i64;
    for dj in -r..=r {
        for di in -r..=r {
            let c = [sc[0] + di, sc[1] + dj];
            if di * di + dj * dj <= r * r && map.state_2d(start.floor, c) != CellState::Occupied {
                grid.set_blocked(c, false);
            }
        }
    }
    if grid.is_blocked(sc) {
        return Err(PlanError::SourceBlocked);
    }
    let goal = if grid.is_blocked(tc) {
        let from_start = fmm_field(&grid, &start.position())?;
        let mut candidates = vec![];
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let c = [tc[0] + di, tc[1] + dj];
                if grid.is_blocked(c) {
                    continue;
                }
                let ctr = grid.center(c);
                let d = (ctr[0] - target.x).hypot(ctr[1] - target.y);
                if d <= RETARGET_RADIUS_M {
                    candidates.push((d, c));
                }
            }
        }
        if candidates.is_empty() {
            return Err(PlanError::NoNearbyTraversable);
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1[1].cmp(&b.1[1])).then(a.1[0].cmp(&b.1[0])));
        let c = candidates
            .iter()
            .find(|(_, c)| from_start.value(*c).is_finite())
            .ok_or(PlanError::Unreachable)?
            .1;
        let ctr = grid.center(c);
        Point3::world(ctr[0], ctr[1], start.z)
    } else {
        Point3::world(target.x, target.y, start.z)
    };
    let field = fmm_field(&grid, &goal)?;
    extract_path(&field, &start.position())
}

#[cfg(test)]
mod tests;
