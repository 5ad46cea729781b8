//! Visibility-graph search over free voxel space.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Point3;
use crate::mapping::{CellState, OccupancyGrid};
use crate::world::raycast::{cell_of, traverse_3d};
use crate::world::VoxelGrid;

use super::{Path, PlanError, AERIAL_CORRIDOR, AERIAL_INFLATION_M};

const PLAN_MARGIN_VOXELS: i64 = 6;

/// Dense blocked/free voxel box. Voxels outside the box count as blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPlanGrid {
    pub origin: [i64; 3],
    pub dims: [usize; 3],
    pub resolution: f64,
    /// Voxels whose center is below this height never become graph nodes.
    pub node_min_z: f64,
    blocked: Vec<bool>,
}

impl VoxelPlanGrid {
    pub fn new(origin: [i64; 3], dims: [usize; 3], resolution: f64) -> Self {
        VoxelPlanGrid {
            origin,
            dims,
            resolution,
            node_min_z: f64::NEG_INFINITY,
            blocked: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Ground-truth occupancy, without inflation.
    pub fn from_truth(voxels: &VoxelGrid, resolution: f64) -> Self {
        VoxelPlanGrid {
            origin: [0, 0, 0],
            dims: [voxels.nx, voxels.ny, voxels.nz],
            resolution,
            node_min_z: f64::NEG_INFINITY,
            blocked: voxels.occupancy().to_vec(),
        }
    }

    fn index(&self, c: [i64; 3]) -> Option<usize> {
        let mut idx = 0usize;
        for a in (0..3).rev() {
            let l = c[a] - self.origin[a];
            if l < 0 || l as usize >= self.dims[a] {
                return None;
            }
            idx = idx * self.dims[a] + l as usize;
        }
        Some(idx)
    }

    fn coord(&self, mut k: usize) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + (k % self.dims[a]) as i64;
            k /= self.dims[a];
        }
        c
    }

    pub fn is_blocked(&self, c: [i64; 3]) -> bool {
        self.index(c).is_none_or(|k| self.blocked[k])
    }

    pub fn set_blocked(&mut self, c: [i64; 3], b: bool) {
        if let Some(k) = self.index(c) {
            self.blocked[k] = b;
        }
    }

    pub fn voxel_of(&self, p: &Point3) -> [i64; 3] {
        [
            cell_of(p.x, self.resolution),
            cell_of(p.y, self.resolution),
            cell_of(p.z, self.resolution),
        ]
    }

    pub fn center(&self, c: [i64; 3]) -> Point3 {
        let r = self.resolution;
        Point3::world((c[0] as f64 + 0.5) * r, (c[1] as f64 + 0.5) * r, (c[2] as f64 + 0.5) * r)
    }

    /// Dilates blocked voxels by a ball of `radius` meters (rounded up to whole voxels).
    pub fn inflate(&self, radius: f64) -> VoxelPlanGrid {
        let r = (radius / self.resolution - 1e-9).ceil().max(0.0) as i64;
        if r == 0 {
            return self.clone();
        }
        let mut offsets = vec![];
        for dk in -r..=r {
            for dj in -r..=r {
                for di in -r..=r {
                    if di * di + dj * dj + dk * dk <= r * r {
                        offsets.push([di, dj, dk]);
                    }
                }
            }
        }
        let mut out = self.clone();
        for k in 0..self.blocked.len() {
            if self.blocked[k] {
                let c = self.coord(k);
                for o in &offsets {
                    out.set_blocked([c[0] + o[0], c[1] + o[1], c[2] + o[2]], true);
                }
            }
        }
        out
    }

    /// Free voxels at convex edges or corners of the blocked set: some
    /// diagonal neighbor in an axis plane is blocked while both face
    /// neighbors that flank it are free.
    pub fn corner_voxels(&self) -> Vec<[i64; 3]> {
        let mut out = vec![];
        for k in 0..self.blocked.len() {
            if self.blocked[k] {
                continue;
            }
            let c = self.coord(k);
            if self.center(c).z < self.node_min_z {
                continue;
            }
            if self.is_convex_corner(c) {
                out.push(c);
            }
        }
        out
    }

    fn is_convex_corner(&self, c: [i64; 3]) -> bool {
        for a in 0..3 {
            for b in (a + 1)..3 {
                for sa in [-1i64, 1] {
                    for sb in [-1i64, 1] {
                        let mut na = c;
                        na[a] += sa;
                        let mut nb = c;
                        nb[b] += sb;
                        let mut diag = na;
                        diag[b] += sb;
                        if self.is_blocked(diag) && !self.is_blocked(na) && !self.is_blocked(nb) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// True when every voxel pierced by the segment is free.
pub fn segment_clear(grid: &VoxelPlanGrid, a: &Point3, b: &Point3) -> bool {
    let d = [b.x - a.x, b.y - a.y, b.z - a.z];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if len == 0.0 {
        return !grid.is_blocked(grid.voxel_of(a));
    }
    let dir = [d[0] / len, d[1] / len, d[2] / len];
    let mut clear = true;
    traverse_3d([a.x, a.y, a.z], dir, grid.resolution, len, |c, _| {
        if grid.is_blocked(c) {
            clear = false;
        }
        clear
    });
    clear
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    id: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest visibility-graph path on an already inflated grid. Nodes are the
/// start, the goal and the convex corner voxels; node ids follow that order
/// with corners sorted lexicographically, and equal-cost expansions prefer
/// the smaller id. Corners far outside the start/goal ellipse are skipped.
pub fn plan_3d_on(grid: &VoxelPlanGrid, start: &Point3, goal: &Point3) -> Result<Path, PlanError> {
    if grid.is_blocked(grid.voxel_of(start)) {
        return Err(PlanError::SourceBlocked);
    }
    if grid.is_blocked(grid.voxel_of(goal)) {
        return Err(PlanError::Unreachable);
    }
    let direct = start.distance_unchecked(goal);
    if segment_clear(grid, start, goal) {
        return Ok(Path::from_points(if direct > 0.0 { vec![*start, *goal] } else { vec![*start] }));
    }
    let budget = (2.0 * direct).max(direct + 20.0 * grid.resolution);
    let mut corners = grid.corner_voxels();
    corners.sort();
    let mut nodes = vec![*start, *goal];
    for c in corners {
        let p = grid.center(c);
        if start.distance_unchecked(&p) + p.distance_unchecked(goal) <= budget {
            nodes.push(p);
        }
    }
    let n = nodes.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    cost[0] = 0.0;
    heap.push(Entry { cost: 0.0, id: 0 });
    while let Some(Entry { cost: cu, id: u }) = heap.pop() {
        if closed[u] || cu > cost[u] {
            continue;
        }
        closed[u] = true;
        if u == 1 {
            break;
        }
        for v in 0..n {
            if closed[v] {
                continue;
            }
            let nc = cu + nodes[u].distance_unchecked(&nodes[v]);
            if nc >= cost[v] || !segment_clear(grid, &nodes[u], &nodes[v]) {
                continue;
            }
            cost[v] = nc;
            prev[v] = u;
            heap.push(Entry { cost: nc, id: v });
        }
    }
    if !cost[1].is_finite() {
        return Err(PlanError::Unreachable);
    }
    let mut ids = vec![1usize];
    while *ids.last().unwrap() != 0 {
        ids.push(prev[*ids.last().unwrap()]);
    }
    ids.reverse();
    Ok(Path::from_points(ids.into_iter().map(|i| nodes[i]).collect()))
}

/// Plans on the aerial belief volume with the standard inflation. Unknown
/// voxels are traversable; inflation around the start voxel is cleared.
pub fn plan_3d(map: &OccupancyGrid, start: &Point3, goal: &Point3) -> Result<Path, PlanError> {
    let res = map.resolution;
    let sv = [cell_of(start.x, res), cell_of(start.y, res), cell_of(start.z, res)];
    let gv = [cell_of(goal.x, res), cell_of(goal.y, res), cell_of(goal.z, res)];
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..3 {
        lo[a] = sv[a].min(gv[a]);
        hi[a] = sv[a].max(gv[a]);
    }
    let vol = map.volume();
    if let Some((l, h)) = vol.and_then(|v| v.known_bbox()) {
        for a in 0..3 {
            lo[a] = lo[a].min(l[a]);
            hi[a] = hi[a].max(h[a]);
        }
    }
    let origin = lo.map(|v| v - PLAN_MARGIN_VOXELS);
    let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1 + 2 * PLAN_MARGIN_VOXELS) as usize);
    let mut grid = VoxelPlanGrid::new(origin, dims, res);
    if let Some(vol) = vol {
        for c in vol.occupied_cells() {
            grid.set_blocked(c, true);
        }
    }
    let mut grid = grid.inflate(AERIAL_INFLATION_M);
    grid.node_min_z = AERIAL_CORRIDOR.0;
    let r = (AERIAL_INFLATION_M / res - 1e-9).ceil().max(0.0) as i64;
    for dk in -r..=r {
        for dj in -r..=r {
            for di in -r..=r {
                let c = [sv[0] + di, sv[1] + dj, sv[2] + dk];
                if di * di + dj * dj + dk * dk <= r * r && map.state_3d(c) != CellState::Occupied {
                    grid.set_blocked(c, false);
                }
            }
        }
    }
    plan_3d_on(&grid, start, goal)
}
