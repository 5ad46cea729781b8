//! Poses, pinhole intrinsics and camera/world transforms.
//!
//! Conventions: the camera frame is +z forward, +x right, +y down. The world
//! frame is right-handed with z up; yaw is measured counter-clockwise from +x
//! in degrees, so `turn_left` increases yaw.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("expected a {expected} frame point, got {actual}")]
    FrameMismatch { expected: Frame, actual: Frame },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-finite pose component")]
    NonFinitePose,
}

/// Normalizes an angle in degrees to `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees, always in `[0, 360)`.
    pub yaw: f64,
    pub floor: usize,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, floor: usize) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && yaw.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        Ok(Pose {
            x,
            y,
            z,
            yaw: normalize_deg(yaw),
            floor,
        })
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Pose {
            x,
            y,
            z: 0.0,
            yaw: normalize_deg(yaw),
            floor: 0,
        }
    }

    pub fn with_yaw(self, yaw: f64) -> Self {
        Pose {
            yaw: normalize_deg(yaw),
            ..self
        }
    }

    pub fn position(&self) -> Point3 {
        Point3::world(self.x, self.y, self.z)
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        let dz = self.z - other.z;
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Camera,
    World,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Camera => f.write_str("camera"),
            Frame::World => f.write_str("world"),
        }
    }
}

/// A 3-D point tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame: Frame,
}

impl Point3 {
    pub fn camera(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z, frame: Frame::Camera }
    }

    pub fn world(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z, frame: Frame::World }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn same_frame(&self, other: &Point3) -> Result<(), GeometryError> {
        if self.frame != other.frame {
            return Err(GeometryError::FrameMismatch {
                expected: self.frame,
                actual: other.frame,
            });
        }
        Ok(())
    }

    pub fn distance(&self, other: &Point3) -> Result<f64, GeometryError> {
        self.same_frame(other)?;
        Ok(self.distance_unchecked(other))
    }

    pub(crate) fn distance_unchecked(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn planar_distance(&self, other: &Point3) -> Result<f64, GeometryError> {
        self.same_frame(other)?;
        Ok((self.x - other.x).hypot(self.y - other.y))
    }

    pub fn sub(&self, other: &Point3) -> Result<[f64; 3], GeometryError> {
        self.same_frame(other)?;
        Ok([self.x - other.x, self.y - other.y, self.z - other.z])
    }

    pub fn offset(&self, d: [f64; 3]) -> Point3 {
        Point3 {
            x: self.x + d[0],
            y: self.y + d[1],
            z: self.z + d[2],
            frame: self.frame,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel intrinsics with the given horizontal field of view.
    pub fn from_hfov(hfov_deg: f64, width: u32, height: u32) -> Self {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Horizontal angle of pixel column `u` relative to the optical axis,
    /// positive to the right, in radians.
    pub fn column_angle(&self, u: f64) -> f64 {
        ((u - self.cx) / self.fx).atan()
    }
}

/// `d * K^-1 [u, v, 1]^T`, with `d` the depth along the optical axis.
pub fn backproject(u: f64, v: f64, d: f64, k: &Intrinsics) -> Result<Point3, GeometryError> {
    if !(d.is_finite() && d > 0.0) {
        return Err(GeometryError::InvalidDepth(d));
    }
    if !k.contains(u, v) {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: k.width,
            height: k.height,
        });
    }
    Ok(Point3::camera(d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d))
}

pub fn project(p: &Point3, k: &Intrinsics) -> Result<(f64, f64), GeometryError> {
    if p.frame != Frame::Camera {
        return Err(GeometryError::FrameMismatch {
            expected: Frame::Camera,
            actual: p.frame,
        });
    }
    if !(p.z > 0.0) {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Camera-to-world rotation columns for a level camera looking along `heading_deg`.
/// Returns the world images of the camera +x, +y and +z axes.
/// Sine and cosine of an angle in degrees, exact at multiples of 90.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let d = normalize_deg(deg);
    match d {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => d.to_radians().sin_cos(),
    }
}

fn level_axes(heading_deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = sin_cos_deg(heading_deg);
    [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]]
}

/// Downward camera: optical axis to -z, image top toward the heading.
fn down_axes(heading_deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = sin_cos_deg(heading_deg);
    [[s, -c, 0.0], [-c, -s, 0.0], [0.0, 0.0, -1.0]]
}

fn apply_axes(axes: &[[f64; 3]; 3], p: &Point3, pose: &Pose) -> Point3 {
    let mut out = [pose.x, pose.y, pose.z];
    for (i, o) in out.iter_mut().enumerate() {
        *o += axes[0][i] * p.x + axes[1][i] * p.y + axes[2][i] * p.z;
    }
    Point3::world(out[0], out[1], out[2])
}

/// Rigid transform of a camera-frame point by a level camera mounted at
/// `view_yaw_offset` degrees from the body heading.
pub fn cam_to_world(p: &Point3, pose: &Pose, view_yaw_offset: f64) -> Result<Point3, GeometryError> {
    if p.frame != Frame::Camera {
        return Err(GeometryError::FrameMismatch {
            expected: Frame::Camera,
            actual: p.frame,
        });
    }
    Ok(apply_axes(&level_axes(pose.yaw + view_yaw_offset), p, pose))
}

/// Same as [`cam_to_world`] for the fixed downward-looking aerial camera.
pub fn cam_to_world_down(p: &Point3, pose: &Pose) -> Result<Point3, GeometryError> {
    if p.frame != Frame::Camera {
        return Err(GeometryError::FrameMismatch {
            expected: Frame::Camera,
            actual: p.frame,
        });
    }
    Ok(apply_axes(&down_axes(pose.yaw), p, pose))
}

/// The five camera mounts. Ground panoramas use the first four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewDir {
    Front,
    Left,
    Right,
    Back,
    Down,
}

impl ViewDir {
    pub const HORIZONTAL: [ViewDir; 4] = [ViewDir::Front, ViewDir::Left, ViewDir::Right, ViewDir::Back];

    pub fn yaw_offset(self) -> f64 {
        match self {
            ViewDir::Front | ViewDir::Down => 0.0,
            ViewDir::Left => 90.0,
            ViewDir::Back => 180.0,
            ViewDir::Right => 270.0,
        }
    }

    pub fn from_yaw_offset(deg: f64) -> Option<ViewDir> {
        let d = normalize_deg(deg);
        ViewDir::HORIZONTAL.into_iter().find(|v| (v.yaw_offset() - d).abs() < 1e-9)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewDir::Front => "front",
            ViewDir::Left => "left",
            ViewDir::Right => "right",
            ViewDir::Back => "back",
            ViewDir::Down => "down",
        }
    }

    pub fn parse(s: &str) -> Option<ViewDir> {
        match s.trim().to_ascii_lowercase().as_str() {
            "front" | "forward" | "ahead" => Some(ViewDir::Front),
            "left" => Some(ViewDir::Left),
            "right" => Some(ViewDir::Right),
            "back" | "backward" | "behind" => Some(ViewDir::Back),
            "down" | "downward" => Some(ViewDir::Down),
            _ => None,
        }
    }

    /// Camera-to-world transform for this mount.
    pub fn to_world(self, p: &Point3, pose: &Pose) -> Result<Point3, GeometryError> {
        match self {
            ViewDir::Down => cam_to_world_down(p, pose),
            other => cam_to_world(p, pose, other.yaw_offset()),
        }
    }
}

impl fmt::Display for ViewDir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// World-frame unit direction of the ray through pixel column `u` (at the
/// principal row) of a mounted camera.
pub fn column_ray(pose: &Pose, dir: ViewDir, u: f64, k: &Intrinsics) -> [f64; 3] {
    let cam = [(u - k.cx) / k.fx, 0.0, 1.0];
    let axes = match dir {
        ViewDir::Down => down_axes(pose.yaw),
        other => level_axes(pose.yaw + other.yaw_offset()),
    };
    let mut w = [0.0; 3];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = axes[0][i] * cam[0] + axes[1][i] * cam[1] + axes[2][i] * cam[2];
    }
    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    [w[0] / n, w[1] / n, w[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k640() -> Intrinsics {
        Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let p = backproject(320.0, 240.0, 2.0, &k640()).unwrap();
        assert_eq!((p.x, p.y, p.z), (0.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_hand_value() {
        let p = backproject(480.0, 240.0, 2.0, &k640()).unwrap();
        assert_eq!((p.x, p.y, p.z), (1.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_rejects_bad_input() {
        assert!(matches!(backproject(0.0, 0.0, 0.0, &k640()), Err(GeometryError::InvalidDepth(_))));
        assert!(matches!(backproject(0.0, 0.0, f64::NAN, &k640()), Err(GeometryError::InvalidDepth(_))));
        assert!(matches!(backproject(640.0, 0.0, 1.0, &k640()), Err(GeometryError::OutOfBounds { .. })));
    }

    #[test]
    fn project_optical_axis_and_behind() {
        let k = k640();
        assert_eq!(project(&Point3::camera(0.0, 0.0, 5.0), &k).unwrap(), (k.cx, k.cy));
        assert!(matches!(project(&Point3::camera(0.0, 0.0, -1.0), &k), Err(GeometryError::BehindCamera(_))));
    }

    #[test]
    fn cam_to_world_examples() {
        let fwd = Point3::camera(0.0, 0.0, 1.0);
        let origin = Pose::planar(0.0, 0.0, 0.0);
        let w = cam_to_world(&fwd, &origin, 0.0).unwrap();
        assert!((w.x - 1.0).abs() < 1e-12 && w.y.abs() < 1e-12);
        // left of a +x-facing agent is +y
        let w = cam_to_world(&fwd, &origin, 90.0).unwrap();
        assert!(w.x.abs() < 1e-12 && (w.y - 1.0).abs() < 1e-12);
        let p = Pose::new(3.0, 4.0, 0.0, 180.0, 0).unwrap();
        let w = cam_to_world(&fwd, &p, 0.0).unwrap();
        assert!((w.x - 2.0).abs() < 1e-12 && (w.y - 4.0).abs() < 1e-12);
        assert!(matches!(
            cam_to_world(&Point3::world(0.0, 0.0, 1.0), &origin, 0.0),
            Err(GeometryError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn camera_right_and_down_axes() {
        let origin = Pose::planar(0.0, 0.0, 0.0);
        let right = cam_to_world(&Point3::camera(1.0, 0.0, 0.0), &origin, 0.0).unwrap();
        assert!((right.y + 1.0).abs() < 1e-12);
        let down = cam_to_world(&Point3::camera(0.0, 1.0, 0.0), &origin, 0.0).unwrap();
        assert!((down.z + 1.0).abs() < 1e-12);
        let nadir = cam_to_world_down(&Point3::camera(0.0, 0.0, 3.0), &Pose::new(0.0, 0.0, 10.0, 0.0, 0).unwrap()).unwrap();
        assert!((nadir.z - 7.0).abs() < 1e-12);
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_deg(-30.0), 330.0);
        assert_eq!(normalize_deg(720.0), 0.0);
        assert_eq!(normalize_deg(normalize_deg(395.0)), normalize_deg(395.0));
        assert_eq!(normalize_deg(-1e-20), 0.0);
        let mut yaw = 10.0;
        for _ in 0..4 {
            yaw = normalize_deg(yaw + 90.0);
        }
        assert_eq!(yaw, 10.0);
    }

    #[test]
    fn column_ray_matches_backprojection() {
        let k = Intrinsics::from_hfov(90.0, 128, 96);
        let pose = Pose::planar(1.0, 2.0, 37.0);
        for u in [0.0, 17.0, 64.0, 127.0] {
            let ray = column_ray(&pose, ViewDir::Left, u, &k);
            let p = backproject(u, k.cy, 3.0, &k).unwrap();
            let w = ViewDir::Left.to_world(&p, &pose).unwrap();
            let d = w.sub(&pose.position()).unwrap();
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            for i in 0..3 {
                assert!((d[i] / n - ray[i]).abs() < 1e-12);
            }
        }
    }
}
