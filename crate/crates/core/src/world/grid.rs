use serde::{Deserialize, Serialize};

/// Label id reserved for "no label".
pub const UNLABELED: u32 = 0;

/// One floor of ground truth. Cells are indexed `(i, j)` with `i` along +x
/// and `j` along +y; cell `(i, j)` covers `[i*res, (i+1)*res) x [j*res, (j+1)*res)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid2D {
    pub width: usize,
    pub height: usize,
    occupied: Vec<bool>,
    labels: Vec<u32>,
}

impl SemanticGrid2D {
    pub fn new(width: usize, height: usize) -> Self {
        SemanticGrid2D {
            width,
            height,
            occupied: vec![false; width * height],
            labels: vec![UNLABELED; width * height],
        }
    }

    pub(crate) fn from_parts(width: usize, height: usize, occupied: Vec<bool>, labels: Vec<u32>) -> Self {
        assert_eq!(occupied.len(), width * height);
        assert_eq!(labels.len(), width * height);
        SemanticGrid2D { width, height, occupied, labels }
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    fn idx(&self, i: i64, j: i64) -> usize {
        j as usize * self.width + i as usize
    }

    /// Out-of-bounds cells are reported as not occupied.
    pub fn is_occupied(&self, i: i64, j: i64) -> bool {
        self.in_bounds(i, j) && self.occupied[self.idx(i, j)]
    }

    pub fn is_free(&self, i: i64, j: i64) -> bool {
        self.in_bounds(i, j) && !self.occupied[self.idx(i, j)]
    }

    pub fn label(&self, i: i64, j: i64) -> u32 {
        if self.in_bounds(i, j) {
            self.labels[self.idx(i, j)]
        } else {
            UNLABELED
        }
    }

    pub fn set(&mut self, i: i64, j: i64, occupied: bool, label: u32) {
        if self.in_bounds(i, j) {
            let k = self.idx(i, j);
            self.occupied[k] = occupied;
            self.labels[k] = label;
        }
    }

    pub fn fill_rect(&mut self, i0: i64, j0: i64, i1: i64, j1: i64, occupied: bool, label: u32) {
        for j in j0.max(0)..j1.min(self.height as i64) {
            for i in i0.max(0)..i1.min(self.width as i64) {
                self.set(i, j, occupied, label);
            }
        }
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Ground truth for the aerial variant; `(i, j, k)` along `(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    occupied: Vec<bool>,
    labels: Vec<u32>,
}

impl VoxelGrid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        VoxelGrid {
            nx,
            ny,
            nz,
            occupied: vec![false; nx * ny * nz],
            labels: vec![UNLABELED; nx * ny * nz],
        }
    }

    pub(crate) fn from_parts(nx: usize, ny: usize, nz: usize, occupied: Vec<bool>, labels: Vec<u32>) -> Self {
        assert_eq!(occupied.len(), nx * ny * nz);
        assert_eq!(labels.len(), nx * ny * nz);
        VoxelGrid { nx, ny, nz, occupied, labels }
    }

    pub fn in_bounds(&self, c: [i64; 3]) -> bool {
        c[0] >= 0
            && c[1] >= 0
            && c[2] >= 0
            && (c[0] as usize) < self.nx
            && (c[1] as usize) < self.ny
            && (c[2] as usize) < self.nz
    }

    fn idx(&self, c: [i64; 3]) -> usize {
        (c[2] as usize * self.ny + c[1] as usize) * self.nx + c[0] as usize
    }

    pub fn is_occupied(&self, c: [i64; 3]) -> bool {
        self.in_bounds(c) && self.occupied[self.idx(c)]
    }

    pub fn is_free(&self, c: [i64; 3]) -> bool {
        self.in_bounds(c) && !self.occupied[self.idx(c)]
    }

    pub fn label(&self, c: [i64; 3]) -> u32 {
        if self.in_bounds(c) {
            self.labels[self.idx(c)]
        } else {
            UNLABELED
        }
    }

    pub fn set(&mut self, c: [i64; 3], occupied: bool, label: u32) {
        if self.in_bounds(c) {
            let k = self.idx(c);
            self.occupied[k] = occupied;
            self.labels[k] = label;
        }
    }

    pub fn fill_box(&mut self, lo: [i64; 3], hi: [i64; 3], occupied: bool, label: u32) {
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    self.set([i, j, k], occupied, label);
                }
            }
        }
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// A directed teleport between two free cells on adjacent floors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StairLink {
    pub floor_a: usize,
    pub cell_a: [i64; 2],
    pub floor_b: usize,
    pub cell_b: [i64; 2],
}

impl StairLink {
    /// The endpoint on `floor` and the opposite endpoint, if this link touches `floor`.
    pub fn from_floor(&self, floor: usize) -> Option<((usize, [i64; 2]), (usize, [i64; 2]))> {
        if self.floor_a == floor {
            Some(((self.floor_a, self.cell_a), (self.floor_b, self.cell_b)))
        } else if self.floor_b == floor {
            Some(((self.floor_b, self.cell_b), (self.floor_a, self.cell_a)))
        } else {
            None
        }
    }
}
