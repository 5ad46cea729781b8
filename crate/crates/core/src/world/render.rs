//! Column ray-cast rendering of depth + semantic views.
//!
//! Each image column is one ray through the principal row. The hit depth and
//! label are replicated over a fixed horizontal band of rows; rows outside the
//! band carry no return.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::UNLABELED;
use super::raycast::{traverse_2d, traverse_3d};
use super::{Layout, WorldError, WorldModel};
use crate::geometry::{column_ray, Intrinsics, Pose, ViewDir};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub hfov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub max_range: f64,
    /// Rows `[band_top, band_bottom)` that carry the column return.
    pub band_top: u32,
    pub band_bottom: u32,
}

impl CameraSpec {
    pub fn ground() -> Self {
        CameraSpec {
            hfov_deg: 90.0,
            width: 128,
            height: 96,
            max_range: 10.0,
            band_top: 24,
            band_bottom: 72,
        }
    }

    pub fn aerial() -> Self {
        CameraSpec {
            max_range: 60.0,
            ..CameraSpec::ground()
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_hfov(self.hfov_deg, self.width, self.height)
    }
}

/// Ratio between ray range and optical-axis depth for column `u`.
pub fn column_scale(k: &Intrinsics, u: f64) -> f64 {
    let t = (u - k.cx) / k.fx;
    (1.0 + t * t).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub dir: ViewDir,
    pub intrinsics: Intrinsics,
    pub band: (u32, u32),
    pub max_range: f64,
    /// Optical-axis depth per column; infinite means no return.
    pub depth_cols: Vec<f64>,
    pub label_cols: Vec<u32>,
}

/// Full-resolution depth image in meters; `f64::INFINITY` marks no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u32>,
}

impl View {
    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn in_band(&self, v: u32) -> bool {
        v >= self.band.0 && v < self.band.1
    }

    /// Depth at a pixel, `None` for no return.
    pub fn depth(&self, u: u32, v: u32) -> Option<f64> {
        if u >= self.width() || !self.in_band(v) {
            return None;
        }
        let d = self.depth_cols[u as usize];
        d.is_finite().then_some(d)
    }

    pub fn label(&self, u: u32, v: u32) -> u32 {
        if u >= self.width() || !self.in_band(v) {
            return UNLABELED;
        }
        self.label_cols[u as usize]
    }

    /// Range along the column ray (not optical-axis depth).
    pub fn column_range(&self, u: u32) -> Option<f64> {
        let d = self.depth_cols[u as usize];
        d.is_finite().then(|| d * column_scale(&self.intrinsics, u as f64))
    }

    pub fn depth_image(&self) -> DepthImage {
        let (w, h) = (self.width(), self.height());
        let mut data = vec![f64::INFINITY; (w * h) as usize];
        for v in self.band.0..self.band.1 {
            for u in 0..w {
                data[(v * w + u) as usize] = self.depth_cols[u as usize];
            }
        }
        DepthImage { width: w, height: h, data }
    }

    pub fn semantic_image(&self) -> SemanticImage {
        let (w, h) = (self.width(), self.height());
        let mut data = vec![UNLABELED; (w * h) as usize];
        for v in self.band.0..self.band.1 {
            for u in 0..w {
                data[(v * w + u) as usize] = self.label_cols[u as usize];
            }
        }
        SemanticImage { width: w, height: h, data }
    }

    pub fn min_finite_depth(&self) -> Option<f64> {
        self.depth_cols.iter().copied().filter(|d| d.is_finite()).min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaObservation {
    pub views: BTreeMap<ViewDir, View>,
    pub intrinsics: Intrinsics,
}

impl PanoramaObservation {
    pub fn view(&self, dir: ViewDir) -> Option<&View> {
        self.views.get(&dir)
    }
}

pub fn render_view(world: &WorldModel, pose: &Pose, dir: ViewDir) -> Result<View, WorldError> {
    world.validate_pose(pose)?;
    if dir == ViewDir::Down && !world.is_aerial() {
        return Err(WorldError::InvalidPose("ground agents have no downward camera".into()));
    }
    let cam = world.camera;
    let k = cam.intrinsics();
    let mut depth_cols = Vec::with_capacity(cam.width as usize);
    let mut label_cols = Vec::with_capacity(cam.width as usize);
    for u in 0..cam.width {
        let ray = column_ray(pose, dir, u as f64, &k);
        let hit = match &world.layout {
            Layout::Ground2d { floors, .. } => {
                let grid = &floors[pose.floor];
                let mut hit = None;
                traverse_2d([pose.x, pose.y], [ray[0], ray[1]], world.resolution, cam.max_range, |i, j, t| {
                    if grid.is_occupied(i, j) {
                        hit = Some((t, grid.label(i, j)));
                        false
                    } else {
                        true
                    }
                });
                hit
            }
            Layout::Aerial3d { voxels } => {
                let mut hit = None;
                traverse_3d([pose.x, pose.y, pose.z], ray, world.resolution, cam.max_range, |c, t| {
                    if voxels.is_occupied(c) {
                        hit = Some((t, voxels.label(c)));
                        false
                    } else {
                        true
                    }
                });
                hit
            }
        };
        match hit {
            Some((t, label)) if t <= cam.max_range => {
                depth_cols.push(t / column_scale(&k, u as f64));
                label_cols.push(label);
            }
            _ => {
                depth_cols.push(f64::INFINITY);
                label_cols.push(UNLABELED);
            }
        }
    }
    Ok(View {
        dir,
        intrinsics: k,
        band: (cam.band_top, cam.band_bottom),
        max_range: cam.max_range,
        depth_cols,
        label_cols,
    })
}

/// View at a yaw offset in degrees (0, 90, 180 or 270).
pub fn render_view_at_offset(world: &WorldModel, pose: &Pose, yaw_offset: f64) -> Result<View, WorldError> {
    let dir = ViewDir::from_yaw_offset(yaw_offset)
        .ok_or_else(|| WorldError::InvalidPose(format!("unsupported view offset {yaw_offset}")))?;
    render_view(world, pose, dir)
}

pub fn render_panorama(world: &WorldModel, pose: &Pose) -> Result<PanoramaObservation, WorldError> {
    let mut views = BTreeMap::new();
    for dir in ViewDir::HORIZONTAL {
        views.insert(dir, render_view(world, pose, dir)?);
    }
    if world.is_aerial() {
        views.insert(ViewDir::Down, render_view(world, pose, ViewDir::Down)?);
    }
    Ok(PanoramaObservation {
        views,
        intrinsics: world.camera.intrinsics(),
    })
}
