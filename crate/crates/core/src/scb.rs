//! Waypoint memory for returning to an earlier decision point and retrying
//! with evidence of what went wrong.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, ViewDir};
use crate::mapping::OccupancyGrid;
use crate::planner::{plan_to, Path, PlanError};

pub const BUFFER_CAPACITY: usize = 64;
/// Frames kept from a failed excursion.
pub const MAX_FAILED_FRAMES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScbError {
    #[error("waypoint {0} is not in the buffer")]
    UnknownWaypoint(u64),
    #[error("no steps taken since the waypoint")]
    EmptyFailure,
    #[error("waypoint {0} has no recorded direction")]
    NoFailedDirection(u64),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub id: u64,
    pub pose: Pose,
    pub panorama_key: String,
    pub chosen_direction: Option<ViewDir>,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointBuffer {
    records: VecDeque<WaypointRecord>,
    capacity: usize,
    next_id: u64,
}

impl Default for WaypointBuffer {
    fn default() -> Self {
        WaypointBuffer::with_capacity(BUFFER_CAPACITY)
    }
}

impl WaypointBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        WaypointBuffer {
            records: VecDeque::with_capacity(capacity),
            capacity,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&WaypointRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn latest(&self) -> Option<&WaypointRecord> {
        self.records.back()
    }

    pub fn records(&self) -> impl DoubleEndedIterator<Item = &WaypointRecord> {
        self.records.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    /// Stores the direction chosen when leaving waypoint `id`.
    pub fn set_direction(&mut self, id: u64, dir: Option<ViewDir>) -> Result<(), ScbError> {
        let r = self
            .records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or(ScbError::UnknownWaypoint(id))?;
        r.chosen_direction = dir;
        Ok(())
    }
}

/// Appends a waypoint, evicting the oldest at capacity.
pub fn record_waypoint(buffer: &mut WaypointBuffer, pose: Pose, panorama_key: &str, caption: &str) -> u64 {
    if buffer.records.len() == buffer.capacity {
        buffer.records.pop_front();
    }
    let id = buffer.next_id;
    buffer.next_id += 1;
    buffer.records.push_back(WaypointRecord {
        id,
        pose,
        panorama_key: panorama_key.to_string(),
        chosen_direction: None,
        caption: caption.to_string(),
    });
    id
}

/// Route back to waypoint `k` on the map as it is now.
pub fn backtrack_path(buffer: &WaypointBuffer, k: u64, map: &OccupancyGrid, current: &Pose) -> Result<Path, ScbError> {
    let wp = buffer.get(k).ok_or(ScbError::UnknownWaypoint(k))?;
    Ok(plan_to(map, current, &wp.pose.position())?)
}

/// One egocentric frame of the episode, logged in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub key: String,
    pub pose: Pose,
    /// Set on the frame taken at a waypoint.
    pub waypoint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSubTrajectory {
    pub origin_wp: u64,
    pub frames: Vec<String>,
    pub poses: Vec<Pose>,
    pub failed_direction: ViewDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryContext {
    pub waypoint_id: u64,
    pub waypoint_pose: Pose,
    pub panorama_key: String,
    pub failed_direction: ViewDir,
    pub failure: FailedSubTrajectory,
}

/// Indices `round(i (n - 1) / (m - 1))` for `i < m`, or all of `0..n`.
pub fn subsample_indices(n: usize, m: usize) -> Vec<usize> {
    if n <= m {
        return (0..n).collect();
    }
    (0..m)
        .map(|i| ((i * (n - 1)) as f64 / (m - 1) as f64).round() as usize)
        .collect()
}

/// Collects the evidence for a retry from waypoint `k`: the frames from the
/// waypoint itself to the latest logged frame.
pub fn assemble_recovery_context(buffer: &WaypointBuffer, k: u64, log: &[FrameEntry]) -> Result<RecoveryContext, ScbError> {
    let wp = buffer.get(k).ok_or(ScbError::UnknownWaypoint(k))?;
    let failed_direction = wp.chosen_direction.ok_or(ScbError::NoFailedDirection(k))?;
    let start = log
        .iter()
        .rposition(|f| f.waypoint == Some(k))
        .ok_or(ScbError::UnknownWaypoint(k))?;
    let tail = &log[start..];
    if tail.len() < 2 {
        return Err(ScbError::EmptyFailure);
    }
    let picked: Vec<&FrameEntry> = subsample_indices(tail.len(), MAX_FAILED_FRAMES).into_iter().map(|i| &tail[i]).collect();
    Ok(RecoveryContext {
        waypoint_id: k,
        waypoint_pose: wp.pose,
        panorama_key: wp.panorama_key.clone(),
        failed_direction,
        failure: FailedSubTrajectory {
            origin_wp: k,
            frames: picked.iter().map(|f| f.key.clone()).collect(),
            poses: picked.iter().map(|f| f.pose).collect(),
            failed_direction,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::CellState;

    fn pose(x: f64) -> Pose {
        Pose::planar(x, 1.0, 0.0)
    }

    #[test]
    fn ids_and_eviction() {
        let mut b = WaypointBuffer::default();
        assert_eq!(record_waypoint(&mut b, pose(0.0), "p0", ""), 0);
        for i in 1..=64 {
            assert_eq!(record_waypoint(&mut b, pose(i as f64), "p", ""), i);
        }
        assert_eq!(b.len(), 64);
        assert!(b.get(64).is_some());
        assert!(b.get(0).is_none());
    }

    #[test]
    fn evicted_waypoint_is_unknown() {
        let mut b = WaypointBuffer::with_capacity(2);
        for i in 0..3 {
            record_waypoint(&mut b, pose(i as f64), "p", "");
        }
        let map = OccupancyGrid::new_2d(0.05);
        assert_eq!(backtrack_path(&b, 0, &map, &pose(0.0)), Err(ScbError::UnknownWaypoint(0)));
    }

    #[test]
    fn backtrack_to_current_is_empty() {
        let mut map = OccupancyGrid::new_2d(0.05);
        for j in 0..40 {
            for i in 0..40 {
                map.set_2d(0, [i, j], CellState::Free);
            }
        }
        let mut b = WaypointBuffer::default();
        let id = record_waypoint(&mut b, pose(1.0), "p", "");
        assert_eq!(backtrack_path(&b, id, &map, &pose(1.0)).unwrap().length, 0.0);
    }

    #[test]
    fn recovery_context_subsamples() {
        let mut b = WaypointBuffer::default();
        let k = record_waypoint(&mut b, pose(1.0), "pano0", "");
        b.set_direction(k, Some(ViewDir::Left)).unwrap();
        let mut log = vec![FrameEntry {
            key: "w0".into(),
            pose: pose(1.0),
            waypoint: Some(k),
        }];
        let ctx = assemble_recovery_context(&b, k, &log);
        assert_eq!(ctx, Err(ScbError::EmptyFailure));
        for s in 1..12 {
            log.push(FrameEntry {
                key: format!("s{s}"),
                pose: pose(1.0 + 0.25 * s as f64),
                waypoint: None,
            });
        }
        let ctx = assemble_recovery_context(&b, k, &log).unwrap();
        assert_eq!(ctx.failure.frames, vec!["w0", "s2", "s3", "s5", "s6", "s8", "s9", "s11"]);
        assert_eq!(ctx.failure.frames.len(), ctx.failure.poses.len());
        assert_eq!(ctx.failed_direction, ViewDir::Left);
        assert!(ctx.failure.poses[0].distance(&ctx.waypoint_pose) <= 1e-6);
    }

    #[test]
    fn subsample_rule() {
        assert_eq!(subsample_indices(12, 8), vec![0, 2, 3, 5, 6, 8, 9, 11]);
        assert_eq!(subsample_indices(3, 8), vec![0, 1, 2]);
    }
}
