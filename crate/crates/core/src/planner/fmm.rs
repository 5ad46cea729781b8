//! First-order upwind Fast Marching on a uniform 2-D grid, plus steepest-descent
//! path extraction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Point3;

use super::{Path, PlanError};

/// A planar traversability grid. `origin` is the global cell index of local cell
/// `(0, 0)`; world coordinates of global cell `(gi, gj)` span
/// `[gi*res, (gi+1)*res) x [gj*res, (gj+1)*res)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [i64; 2],
    /// World z of the plane; carried into path waypoints.
    pub z: f64,
    blocked: Vec<bool>,
}

impl PlanGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [i64; 2], z: f64) -> Self {
        PlanGrid {
            width,
            height,
            resolution,
            origin,
            z,
            blocked: vec![false; width * height],
        }
    }

    pub fn from_blocked(width: usize, height: usize, resolution: f64, origin: [i64; 2], z: f64, blocked: Vec<bool>) -> Self {
        assert_eq!(blocked.len(), width * height);
        PlanGrid {
            width,
            height,
            resolution,
            origin,
            z,
            blocked,
        }
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    /// Local index of a global cell.
    pub fn local(&self, g: [i64; 2]) -> Option<usize> {
        let li = g[0] - self.origin[0];
        let lj = g[1] - self.origin[1];
        if li < 0 || lj < 0 || li as usize >= self.width || lj as usize >= self.height {
            None
        } else {
            Some(lj as usize * self.width + li as usize)
        }
    }

    pub fn global(&self, idx: usize) -> [i64; 2] {
        [self.origin[0] + (idx % self.width) as i64, self.origin[1] + (idx / self.width) as i64]
    }

    pub fn cell_of_point(&self, x: f64, y: f64) -> [i64; 2] {
        [(x / self.resolution).floor() as i64, (y / self.resolution).floor() as i64]
    }

    pub fn center(&self, g: [i64; 2]) -> [f64; 2] {
        [(g[0] as f64 + 0.5) * self.resolution, (g[1] as f64 + 0.5) * self.resolution]
    }

    pub fn is_blocked_idx(&self, idx: usize) -> bool {
        self.blocked[idx]
    }

    /// Cells outside the grid count as blocked.
    pub fn is_blocked(&self, g: [i64; 2]) -> bool {
        self.local(g).is_none_or(|k| self.blocked[k])
    }

    pub fn set_blocked(&mut self, g: [i64; 2], blocked: bool) {
        if let Some(k) = self.local(g) {
            self.blocked[k] = blocked;
        }
    }

    /// Dilates blocked cells by `radius` meters (cell-center distance, rounded up
    /// to whole cells).
    pub fn inflate(&self, radius: f64) -> PlanGrid {
        let r = (radius / self.resolution - 1e-9).ceil().max(0.0) as i64;
        if r == 0 {
            return self.clone();
        }
        let mut offsets = vec![];
        for dj in -r..=r {
            for di in -r..=r {
                if di * di + dj * dj <= r * r {
                    offsets.push((di, dj));
                }
            }
        }
        let mut out = self.clone();
        let (w, h) = (self.width as i64, self.height as i64);
        for idx in 0..self.blocked.len() {
            if !self.blocked[idx] {
                continue;
            }
            let (i, j) = ((idx % self.width) as i64, (idx / self.width) as i64);
            for &(di, dj) in &offsets {
                let (ni, nj) = (i + di, j + dj);
                if ni >= 0 && nj >= 0 && ni < w && nj < h {
                    out.blocked[(nj * w + ni) as usize] = true;
                }
            }
        }
        out
    }
}

/// Geodesic distance in meters from the source set; `f64::INFINITY` where
/// unreachable or blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [i64; 2],
    pub z: f64,
    pub values: Vec<f64>,
    pub sources: Vec<[i64; 2]>,
    /// Exact world point of a single source, used as the final path waypoint.
    pub source_point: Option<Point3>,
}

impl DistanceField {
    pub fn local(&self, g: [i64; 2]) -> Option<usize> {
        let li = g[0] - self.origin[0];
        let lj = g[1] - self.origin[1];
        if li < 0 || lj < 0 || li as usize >= self.width || lj as usize >= self.height {
            None
        } else {
            Some(lj as usize * self.width + li as usize)
        }
    }

    pub fn value(&self, g: [i64; 2]) -> f64 {
        self.local(g).map_or(f64::INFINITY, |k| self.values[k])
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.value([(x / self.resolution).floor() as i64, (y / self.resolution).floor() as i64])
    }

    fn center(&self, g: [i64; 2]) -> [f64; 2] {
        [(g[0] as f64 + 0.5) * self.resolution, (g[1] as f64 + 0.5) * self.resolution]
    }
}

#[derive(PartialEq)]
struct Trial {
    value: f64,
    idx: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on value, then index for determinism
        other.value.total_cmp(&self.value).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves `|grad T| = 1` with `T = seed value` on the seed cells. Blocked
/// seeds are ignored.
pub fn fmm_solve(grid: &PlanGrid, seeds: &[(usize, f64)]) -> Vec<f64> {
    let n = grid.len();
    let h = grid.resolution;
    let mut values = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(idx, v) in seeds {
        if idx < n && !grid.blocked[idx] && v < values[idx] {
            values[idx] = v;
            heap.push(Trial { value: v, idx });
        }
    }
    let w = grid.width as i64;
    let hgt = grid.height as i64;
    let at = |i: i64, j: i64| (i >= 0 && j >= 0 && i < w && j < hgt).then(|| (j * w + i) as usize);
    while let Some(Trial { value, idx }) = heap.pop() {
        if known[idx] || value > values[idx] {
            continue;
        }
        known[idx] = true;
        let (i, j) = ((idx as i64) % w, (idx as i64) / w);
        for (di, dj) in NEIGHBORS8 {
            let Some(nb) = at(i + di, j + dj) else { continue };
            if known[nb] || grid.blocked[nb] {
                continue;
            }
            let t = upwind_update(grid, &values, &known, (i + di, j + dj), h);
            if t < values[nb] {
                values[nb] = t;
                heap.push(Trial { value: t, idx: nb });
            }
        }
    }
    values
}

/// Eight-neighbor first-order update: the smallest of the single-neighbor
/// estimates and the plane-wave solutions over the eight triangles formed by
/// an axis neighbor and an adjacent diagonal. A diagonal neighbor counts only
/// when both cells flanking it are traversable.
fn upwind_update(grid: &PlanGrid, values: &[f64], known: &[bool], (i, j): (i64, i64), h: f64) -> f64 {
    let (w, hgt) = (grid.width as i64, grid.height as i64);
    // 3x3 neighborhood, indexed [dj + 1][di + 1].
    let mut val = [[f64::INFINITY; 3]; 3];
    let mut open = [[false; 3]; 3];
    for dj in -1..=1i64 {
        for di in -1..=1i64 {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= w || nj >= hgt {
                continue;
            }
            let k = (nj * w + ni) as usize;
            open[(dj + 1) as usize][(di + 1) as usize] = !grid.blocked[k];
            if known[k] {
                val[(dj + 1) as usize][(di + 1) as usize] = values[k];
            }
        }
    }
    let v = |di: i64, dj: i64| val[(dj + 1) as usize][(di + 1) as usize];
    let o = |di: i64, dj: i64| open[(dj + 1) as usize][(di + 1) as usize];
    let diag = |di: i64, dj: i64| if o(di, 0) && o(0, dj) { v(di, dj) } else { f64::INFINITY };
    let mut best = f64::INFINITY;
    for (di, dj) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
        best = best.min(diag(di, dj) + h * std::f64::consts::SQRT_2);
    }
    for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
        let ta = v(di, dj);
        if !ta.is_finite() {
            continue;
        }
        best = best.min(ta + h);
        // The two diagonals next to this axis neighbor.
        for s in [-1i64, 1] {
            let (ddi, ddj) = if di != 0 { (di, s) } else { (s, dj) };
            let td = diag(ddi, ddj);
            let q = (ta - td) / h;
            if (0.0..=std::f64::consts::FRAC_1_SQRT_2).contains(&q) {
                best = best.min(ta + h * (1.0 - q * q).sqrt());
            }
        }
    }
    best
}

/// Distance field from a single world-point source.
pub fn fmm_field(grid: &PlanGrid, source: &Point3) -> Result<DistanceField, PlanError> {
    let g = grid.cell_of_point(source.x, source.y);
    let idx = match grid.local(g) {
        Some(k) if !grid.is_blocked_idx(k) => k,
        _ => return Err(PlanError::SourceBlocked),
    };
    let values = fmm_solve(grid, &[(idx, 0.0)]);
    Ok(DistanceField {
        width: grid.width,
        height: grid.height,
        resolution: grid.resolution,
        origin: grid.origin,
        z: grid.z,
        values,
        sources: vec![g],
        source_point: Some(Point3::world(source.x, source.y, grid.z)),
    })
}

/// Multi-source field with per-source initial values. A seed undercut by
/// the front from another seed is not kept as a source.
pub fn fmm_field_multi(grid: &PlanGrid, sources: &[([i64; 2], f64)]) -> DistanceField {
    let seeds: Vec<(usize, f64)> = sources.iter().filter_map(|(g, v)| grid.local(*g).map(|k| (k, *v))).collect();
    let values = fmm_solve(grid, &seeds);
    let sources = sources
        .iter()
        .filter(|(g, v)| grid.local(*g).is_some_and(|k| values[k] >= *v))
        .map(|(g, _)| *g)
        .collect();
    DistanceField {
        width: grid.width,
        height: grid.height,
        resolution: grid.resolution,
        origin: grid.origin,
        z: grid.z,
        values,
        sources,
        source_point: None,
    }
}

const NEIGHBORS8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Cell sequence of the discrete steepest descent from `start` to a source.
/// Each step moves to the 8-neighbor with the lowest value (diagonals only
/// when both side cells are finite); values strictly decrease.
pub fn descent_cells(field: &DistanceField, start: [i64; 2]) -> Result<Vec<[i64; 2]>, PlanError> {
    let v0 = field.value(start);
    if !v0.is_finite() {
        return Err(PlanError::Unreachable);
    }
    let mut cells = vec![start];
    let mut cur = start;
    let mut cur_v = v0;
    let limit = field.width * field.height + 1;
    while !field.sources.contains(&cur) && cells.len() <= limit {
        let mut best: Option<([i64; 2], f64)> = None;
        for (di, dj) in NEIGHBORS8 {
            let nb = [cur[0] + di, cur[1] + dj];
            let v = field.value(nb);
            if !v.is_finite() {
                continue;
            }
            if di != 0 && dj != 0 {
                let side_a = field.value([cur[0] + di, cur[1]]);
                let side_b = field.value([cur[0], cur[1] + dj]);
                if !side_a.is_finite() || !side_b.is_finite() {
                    continue;
                }
            }
            if v < cur_v && best.is_none_or(|(_, bv)| v < bv) {
                best = Some((nb, v));
            }
        }
        match best {
            Some((nb, v)) => {
                cells.push(nb);
                cur = nb;
                cur_v = v;
            }
            None => break,
        }
    }
    Ok(cells)
}

/// Steepest-descent path from `start` to the field source, decimated by
/// collinearity.
pub fn extract_path(field: &DistanceField, start: &Point3) -> Result<Path, PlanError> {
    let g = [
        (start.x / field.resolution).floor() as i64,
        (start.y / field.resolution).floor() as i64,
    ];
    let cells = descent_cells(field, g)?;
    let z = field.z;
    let mut pts = vec![Point3::world(start.x, start.y, z)];
    for c in cells.iter().skip(1) {
        let p = field.center(*c);
        pts.push(Point3::world(p[0], p[1], z));
    }
    if let Some(sp) = field.source_point {
        if cells.last().is_some_and(|c| field.sources.contains(c)) {
            if cells.len() > 1 {
                pts.pop();
            }
            pts.push(Point3::world(sp.x, sp.y, z));
        }
    }
    Ok(Path::from_points(decimate(pts, 1e-3)))
}

/// Removes repeated points and interior points where the heading changes by
/// less than `tol` radians.
pub fn decimate(pts: Vec<Point3>, tol: f64) -> Vec<Point3> {
    let mut dedup: Vec<Point3> = Vec::with_capacity(pts.len());
    for p in pts {
        if dedup.last().is_none_or(|q: &Point3| q.distance_unchecked(&p) > 1e-12) {
            dedup.push(p);
        }
    }
    if dedup.len() < 3 {
        return dedup;
    }
    let mut out = vec![dedup[0]];
    for i in 1..dedup.len() - 1 {
        let prev = *out.last().unwrap();
        let (a, b) = (dedup[i], dedup[i + 1]);
        let h1 = (a.y - prev.y).atan2(a.x - prev.x);
        let h2 = (b.y - a.y).atan2(b.x - a.x);
        let mut d = (h2 - h1).abs();
        if d > std::f64::consts::PI {
            d = 2.0 * std::f64::consts::PI - d;
        }
        if d >= tol || (a.z - prev.z).abs() > 1e-12 {
            out.push(a);
        }
    }
    out.push(*dedup.last().unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(n: usize, res: f64) -> PlanGrid {
        PlanGrid::new(n, n, res, [0, 0], 0.0)
    }

    #[test]
    fn axis_values_are_exact_multiples() {
        let g = open(21, 1.0);
        let f = fmm_field(&g, &Point3::world(10.5, 10.5, 0.0)).unwrap();
        assert_eq!(f.value([10, 10]), 0.0);
        assert_eq!(f.value([15, 10]), 5.0);
        assert_eq!(f.value([10, 0]), 10.0);
    }

    #[test]
    fn open_grid_close_to_euclidean() {
        let g = open(41, 0.1);
        let src = Point3::world(2.05, 2.05, 0.0);
        let f = fmm_field(&g, &src).unwrap();
        for (i, j) in [(40, 40), (40, 25), (0, 33), (5, 38)] {
            let c = g.center([i, j]);
            let e = (c[0] - 2.05).hypot(c[1] - 2.05);
            let v = f.value([i, j]);
            assert!((v - e).abs() <= 0.05 * e, "({i},{j}): fmm {v} euclid {e}");
        }
    }

    #[test]
    fn sealed_room_is_unreachable() {
        let mut g = open(10, 1.0);
        for k in 0..10 {
            g.set_blocked([5, k], true);
        }
        let f = fmm_field(&g, &Point3::world(1.5, 1.5, 0.0)).unwrap();
        assert!(f.value([8, 8]).is_infinite());
        assert!(matches!(
            extract_path(&f, &Point3::world(8.5, 8.5, 0.0)),
            Err(PlanError::Unreachable)
        ));
    }

    #[test]
    fn blocked_source_rejected() {
        let mut g = open(5, 1.0);
        g.set_blocked([2, 2], true);
        assert!(matches!(fmm_field(&g, &Point3::world(2.5, 2.5, 0.0)), Err(PlanError::SourceBlocked)));
    }

    #[test]
    fn start_equals_source_gives_single_point() {
        let g = open(5, 1.0);
        let s = Point3::world(2.5, 2.5, 0.0);
        let f = fmm_field(&g, &s).unwrap();
        let p = extract_path(&f, &s).unwrap();
        assert_eq!(p.waypoints.len(), 1);
        assert_eq!(p.length, 0.0);
    }

    #[test]
    fn corridor_path_is_straight() {
        let mut g = PlanGrid::new(60, 5, 0.1, [0, 0], 0.0);
        for i in 0..60 {
            g.set_blocked([i, 0], true);
            g.set_blocked([i, 4], true);
        }
        let src = Point3::world(5.85, 0.25, 0.0);
        let f = fmm_field(&g, &src).unwrap();
        let p = extract_path(&f, &Point3::world(0.15, 0.25, 0.0)).unwrap();
        let straight = 5.85 - 0.15;
        assert!((p.length - straight).abs() <= 0.05 * straight);
        assert_eq!(p.waypoints.len(), 2);
    }

    #[test]
    fn descent_is_strictly_monotone() {
        let mut g = open(30, 0.1);
        for k in 0..25 {
            g.set_blocked([15, k], true);
        }
        let f = fmm_field(&g, &Point3::world(2.55, 0.55, 0.0)).unwrap();
        let cells = descent_cells(&f, [28, 1]).unwrap();
        for w in cells.windows(2) {
            assert!(f.value(w[1]) < f.value(w[0]));
        }
        assert_eq!(*cells.last().unwrap(), [25, 5]);
    }

    #[test]
    fn inflation_radius_in_cells() {
        let mut g = open(11, 0.05);
        g.set_blocked([5, 5], true);
        let inf = g.inflate(0.18);
        assert!(inf.is_blocked([9, 5]));
        assert!(!inf.is_blocked([10, 5]));
        assert!(!inf.is_blocked([8, 8]));
    }
}
