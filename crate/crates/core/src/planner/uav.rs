//! Fallback waypoint for aerial agents when visual grounding fails.

use crate::geometry::{sin_cos_deg, Point3, Pose};
use crate::world::View;

use super::PlanError;

/// Allowed flight altitude band in meters.
pub const AERIAL_CORRIDOR: (f64, f64) = (2.0, 40.0);
pub const MAX_UAV_HOP_M: f64 = 5.0;
const MIN_CLEARANCE_M: f64 = 1.0;

/// Rotates a vector from the start heading frame (x forward, y left, z up)
/// into the world frame.
pub fn heading_frame_to_world(start_pose: &Pose, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = sin_cos_deg(start_pose.yaw);
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// A waypoint along `goal_direction` (start heading frame) from the current
/// position. The hop is half the nearest front obstacle distance, capped at
/// [`MAX_UAV_HOP_M`].
pub fn direction_constrained_waypoint(
    start_pose: &Pose,
    current_pose: &Pose,
    goal_direction: [f64; 3],
    front: &View,
) -> Result<Point3, PlanError> {
    let hop = match front.min_finite_depth() {
        Some(d) if d < MIN_CLEARANCE_M => return Err(PlanError::BlockedAhead),
        Some(d) => (0.5 * d).min(MAX_UAV_HOP_M),
        None => MAX_UAV_HOP_M,
    };
    let w = heading_frame_to_world(start_pose, goal_direction);
    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let w = if n > 0.0 { [w[0] / n, w[1] / n, w[2] / n] } else { [0.0; 3] };
    let z = (current_pose.z + hop * w[2]).clamp(AERIAL_CORRIDOR.0, AERIAL_CORRIDOR.1);
    Ok(Point3::world(current_pose.x + hop * w[0], current_pose.y + hop * w[1], z))
}
