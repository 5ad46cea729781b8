//! The agent's belief map, accumulated from rendered depth views.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{column_ray, Pose, ViewDir};
use crate::world::raycast::{cell_of, traverse_2d, traverse_3d};
use crate::world::{column_scale, PanoramaObservation, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

impl CellState {
    fn code(self) -> u8 {
        match self {
            CellState::Unknown => 0,
            CellState::Free => 1,
            CellState::Occupied => 2,
        }
    }

    fn from_code(c: u8) -> CellState {
        match c {
            1 => CellState::Free,
            2 => CellState::Occupied,
            _ => CellState::Unknown,
        }
    }
}

/// Cells whose hit distance is within this of a competing cell are left
/// untouched, so exact corner ties never produce a wrong label.
const TIE_EPS: f64 = 1e-6;
const GROW_MARGIN: i64 = 32;

/// Auto-growing dense grid over `D` integer axes.
#[derive(Debug, Clone, PartialEq)]
struct Dense<const D: usize> {
    origin: [i64; D],
    dims: [usize; D],
    cells: Vec<u8>,
}

impl<const D: usize> Dense<D> {
    fn empty() -> Self {
        Dense {
            origin: [0; D],
            dims: [0; D],
            cells: vec![],
        }
    }

    fn index(&self, c: [i64; D]) -> Option<usize> {
        let mut idx = 0usize;
        for a in (0..D).rev() {
            let l = c[a] - self.origin[a];
            if l < 0 || l as usize >= self.dims[a] {
                return None;
            }
            idx = idx * self.dims[a] + l as usize;
        }
        Some(idx)
    }

    fn get(&self, c: [i64; D]) -> CellState {
        self.index(c).map_or(CellState::Unknown, |k| CellState::from_code(self.cells[k]))
    }

    /// Makes sure the box `[lo, hi]` (inclusive) is covered.
    fn ensure(&mut self, lo: [i64; D], hi: [i64; D]) {
        let covered = !self.cells.is_empty()
            && (0..D).all(|a| lo[a] >= self.origin[a] && hi[a] < self.origin[a] + self.dims[a] as i64);
        if covered {
            return;
        }
        let mut new_origin = [0i64; D];
        let mut new_dims = [0usize; D];
        for a in 0..D {
            let (mut l, mut h) = (lo[a] - GROW_MARGIN, hi[a] + GROW_MARGIN);
            if !self.cells.is_empty() {
                l = l.min(self.origin[a]);
                h = h.max(self.origin[a] + self.dims[a] as i64 - 1);
            }
            new_origin[a] = l;
            new_dims[a] = (h - l + 1) as usize;
        }
        let mut grown = Dense {
            origin: new_origin,
            dims: new_dims,
            cells: vec![0u8; new_dims.iter().product()],
        };
        for (k, &v) in self.cells.iter().enumerate() {
            if v != 0 {
                let c = self.coord(k);
                let nk = grown.index(c).expect("grown grid covers old grid");
                grown.cells[nk] = v;
            }
        }
        *self = grown;
    }

    fn coord(&self, mut k: usize) -> [i64; D] {
        let mut c = [0i64; D];
        for a in 0..D {
            c[a] = self.origin[a] + (k % self.dims[a]) as i64;
            k /= self.dims[a];
        }
        c
    }

    fn mark(&mut self, c: [i64; D], s: CellState) {
        let k = self.index(c).expect("cell inside ensured bounds");
        let cur = self.cells[k];
        // occupied wins; nothing reverts to unknown
        if s.code() > cur {
            self.cells[k] = s.code();
        }
    }

    fn set(&mut self, c: [i64; D], s: CellState) {
        self.ensure(c, c);
        let k = self.index(c).expect("cell inside ensured bounds");
        self.cells[k] = s.code();
    }

    fn known_bbox(&self) -> Option<([i64; D], [i64; D])> {
        let mut lo = [i64::MAX; D];
        let mut hi = [i64::MIN; D];
        let mut any = false;
        for (k, &v) in self.cells.iter().enumerate() {
            if v != 0 {
                any = true;
                let c = self.coord(k);
                for a in 0..D {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
        }
        any.then_some((lo, hi))
    }

    fn known_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0).count()
    }
}

/// One floor of the belief map.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer2D {
    dense: Dense<2>,
}

impl Layer2D {
    pub fn state(&self, c: [i64; 2]) -> CellState {
        self.dense.get(c)
    }

    /// Inclusive bounds of all known cells.
    pub fn known_bbox(&self) -> Option<([i64; 2], [i64; 2])> {
        self.dense.known_bbox()
    }

    pub fn known_count(&self) -> usize {
        self.dense.known_count()
    }

    /// Every known cell with its state, in row-major order.
    pub fn known_cells(&self) -> Vec<([i64; 2], CellState)> {
        self.dense
            .cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(k, &v)| (self.dense.coord(k), CellState::from_code(v)))
            .collect()
    }
}

/// Aerial belief volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dense: Dense<3>,
}

impl Volume3D {
    pub fn state(&self, c: [i64; 3]) -> CellState {
        self.dense.get(c)
    }

    pub fn known_bbox(&self) -> Option<([i64; 3], [i64; 3])> {
        self.dense.known_bbox()
    }

    pub fn known_count(&self) -> usize {
        self.dense.known_count()
    }

    pub fn occupied_cells(&self) -> Vec<[i64; 3]> {
        self.dense
            .cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == CellState::Occupied.code())
            .map(|(k, _)| self.dense.coord(k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    floors: BTreeMap<usize, Layer2D>,
    volume: Option<Volume3D>,
}

impl OccupancyGrid {
    pub fn new_2d(resolution: f64) -> Self {
        OccupancyGrid {
            resolution,
            floors: BTreeMap::new(),
            volume: None,
        }
    }

    pub fn new_3d(resolution: f64) -> Self {
        OccupancyGrid {
            resolution,
            floors: BTreeMap::new(),
            volume: Some(Volume3D { dense: Dense::empty() }),
        }
    }

    pub fn is_3d(&self) -> bool {
        self.volume.is_some()
    }

    pub fn layer(&self, floor: usize) -> Option<&Layer2D> {
        self.floors.get(&floor)
    }

    pub fn volume(&self) -> Option<&Volume3D> {
        self.volume.as_ref()
    }

    pub fn state_2d(&self, floor: usize, c: [i64; 2]) -> CellState {
        self.floors.get(&floor).map_or(CellState::Unknown, |l| l.state(c))
    }

    pub fn state_3d(&self, c: [i64; 3]) -> CellState {
        self.volume.as_ref().map_or(CellState::Unknown, |v| v.state(c))
    }

    /// Overwrites one cell, bypassing the integration rules. Meant for
    /// hand-built fixtures.
    pub fn set_2d(&mut self, floor: usize, c: [i64; 2], s: CellState) {
        self.floors.entry(floor).or_insert_with(|| Layer2D { dense: Dense::empty() }).dense.set(c, s);
    }

    pub fn set_3d(&mut self, c: [i64; 3], s: CellState) {
        if let Some(v) = self.volume.as_mut() {
            v.dense.set(c, s);
        }
    }

    /// Marks the cells pierced by every column ray of `view`.
    pub fn integrate_view(&mut self, pose: &Pose, view: &View) {
        let res = self.resolution;
        let k = &view.intrinsics;
        for u in 0..view.width() {
            let ray = column_ray(pose, view.dir, u as f64, k);
            let d = view.depth_cols[u as usize];
            let range = d.is_finite().then(|| d * column_scale(k, u as f64));
            let max_t = range.map_or(view.max_range, |r| r + TIE_EPS);
            if let Some(vol) = self.volume.as_mut() {
                let o = [pose.x, pose.y, pose.z];
                let end = [o[0] + ray[0] * max_t, o[1] + ray[1] * max_t, o[2] + ray[2] * max_t];
                let lo = [0, 1, 2].map(|a| cell_of(o[a].min(end[a]), res) - 1);
                let hi = [0, 1, 2].map(|a| cell_of(o[a].max(end[a]), res) + 1);
                vol.dense.ensure(lo, hi);
                let mut visited = vec![];
                traverse_3d(o, ray, res, max_t, |c, t| {
                    visited.push((c, t));
                    true
                });
                apply_ray(&mut vol.dense, &visited, range, view.max_range);
            } else {
                let layer = self.floors.entry(pose.floor).or_insert_with(|| Layer2D { dense: Dense::empty() });
                let o = [pose.x, pose.y];
                let dir = [ray[0], ray[1]];
                let end = [o[0] + dir[0] * max_t, o[1] + dir[1] * max_t];
                let lo = [0, 1].map(|a| cell_of(o[a].min(end[a]), res) - 1);
                let hi = [0, 1].map(|a| cell_of(o[a].max(end[a]), res) + 1);
                layer.dense.ensure(lo, hi);
                let mut visited = vec![];
                traverse_2d(o, dir, res, max_t, |i, j, t| {
                    visited.push(([i, j], t));
                    true
                });
                apply_ray(&mut layer.dense, &visited, range, view.max_range);
            }
        }
    }

    pub fn integrate_panorama(&mut self, pose: &Pose, pano: &PanoramaObservation) {
        for (dir, view) in &pano.views {
            if *dir == ViewDir::Down && !self.is_3d() {
                continue;
            }
            self.integrate_view(pose, view);
        }
    }

    pub fn known_count(&self) -> usize {
        self.floors.values().map(Layer2D::known_count).sum::<usize>()
            + self.volume.as_ref().map_or(0, Volume3D::known_count)
    }

    /// Known cells over the cells inside the bounding box of known cells,
    /// summed over floors.
    pub fn known_fraction(&self) -> f64 {
        let mut known = 0usize;
        let mut total = 0usize;
        for layer in self.floors.values() {
            if let Some((lo, hi)) = layer.known_bbox() {
                known += layer.known_count();
                total += ((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1)) as usize;
            }
        }
        if let Some(vol) = &self.volume {
            if let Some((lo, hi)) = vol.known_bbox() {
                known += vol.known_count();
                total += ((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1)) as usize;
            }
        }
        if total == 0 {
            0.0
        } else {
            known as f64 / total as f64
        }
    }

    /// Plain PGM (P2) of one floor: unknown 128, free 255, occupied 0. Rows
    /// run from high y to low y so the image reads like a plan view.
    pub fn to_pgm(&self, floor: usize) -> String {
        let mut out = String::new();
        let Some((lo, hi)) = self.floors.get(&floor).and_then(Layer2D::known_bbox) else {
            out.push_str("P2\n0 0\n255\n");
            return out;
        };
        let layer = &self.floors[&floor];
        let (w, h) = (hi[0] - lo[0] + 1, hi[1] - lo[1] + 1);
        let _ = writeln!(out, "P2\n{w} {h}\n255");
        for j in (lo[1]..=hi[1]).rev() {
            let row: Vec<&str> = (lo[0]..=hi[0])
                .map(|i| match layer.state([i, j]) {
                    CellState::Unknown => "128",
                    CellState::Free => "255",
                    CellState::Occupied => "0",
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

fn apply_ray<const D: usize>(dense: &mut Dense<D>, visited: &[([i64; D], f64)], range: Option<f64>, max_range: f64) {
    match range {
        Some(r) => {
            let near: Vec<usize> = (0..visited.len()).filter(|&k| (visited[k].1 - r).abs() <= TIE_EPS).collect();
            for (c, t) in visited {
                if *t < r - TIE_EPS {
                    dense.mark(*c, CellState::Free);
                }
            }
            if near.len() == 1 {
                dense.mark(visited[near[0]].0, CellState::Occupied);
            }
        }
        None => {
            for (c, t) in visited {
                if *t <= max_range - TIE_EPS {
                    dense.mark(*c, CellState::Free);
                }
            }
        }
    }
}
