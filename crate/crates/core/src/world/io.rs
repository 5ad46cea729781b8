//! Versioned JSON world files with run-length-encoded grids.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CameraSpec, Layout, SemanticGrid2D, StairLink, TaskSpec, VoxelGrid, WorldError, WorldModel};

pub const WORLD_FORMAT: &str = "navloop-world";
pub const WORLD_FORMAT_VERSION: u32 = 1;

/// `(run length, value)` pairs.
type Rle = Vec<(u64, u32)>;

fn rle_encode(values: impl Iterator<Item = u32>) -> Rle {
    let mut out: Rle = vec![];
    for v in values {
        match out.last_mut() {
            Some((n, last)) if *last == v => *n += 1,
            _ => out.push((1, v)),
        }
    }
    out
}

fn rle_decode(rle: &Rle, expected: usize) -> Result<Vec<u32>, WorldError> {
    let total: u64 = rle.iter().map(|(n, _)| *n).sum();
    if total != expected as u64 {
        return Err(WorldError::Format(format!("run lengths cover {total} cells, expected {expected}")));
    }
    let mut out = Vec::with_capacity(expected);
    for &(n, v) in rle {
        out.extend(std::iter::repeat_n(v, n as usize));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FloorFile {
    width: usize,
    height: usize,
    occupancy: Rle,
    labels: Rle,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
enum LayoutFile {
    Ground2d {
        floors: Vec<FloorFile>,
        stair_links: Vec<StairLink>,
    },
    Aerial3d {
        nx: usize,
        ny: usize,
        nz: usize,
        occupancy: Rle,
        labels: Rle,
    },
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    format: String,
    version: u32,
    name: String,
    resolution: f64,
    floor_height: f64,
    camera: CameraSpec,
    labels: BTreeMap<u32, String>,
    layout: LayoutFile,
    task: TaskSpec,
}

fn to_file(world: &WorldModel) -> WorldFile {
    let layout = match &world.layout {
        Layout::Ground2d { floors, stair_links } => LayoutFile::Ground2d {
            floors: floors
                .iter()
                .map(|g| FloorFile {
                    width: g.width,
                    height: g.height,
                    occupancy: rle_encode(g.occupancy().iter().map(|&b| b as u32)),
                    labels: rle_encode(g.labels().iter().copied()),
                })
                .collect(),
            stair_links: stair_links.clone(),
        },
        Layout::Aerial3d { voxels } => LayoutFile::Aerial3d {
            nx: voxels.nx,
            ny: voxels.ny,
            nz: voxels.nz,
            occupancy: rle_encode(voxels.occupancy().iter().map(|&b| b as u32)),
            labels: rle_encode(voxels.labels().iter().copied()),
        },
    };
    WorldFile {
        format: WORLD_FORMAT.to_string(),
        version: WORLD_FORMAT_VERSION,
        name: world.name.clone(),
        resolution: world.resolution,
        floor_height: world.floor_height,
        camera: world.camera,
        labels: world.labels.clone(),
        layout,
        task: world.task.clone(),
    }
}

fn from_file(f: WorldFile) -> Result<WorldModel, WorldError> {
    if f.format != WORLD_FORMAT {
        return Err(WorldError::Format(format!("unknown format tag {:?}", f.format)));
    }
    if f.version != WORLD_FORMAT_VERSION {
        return Err(WorldError::Format(format!("unsupported version {}", f.version)));
    }
    if !(f.resolution > 0.0) {
        return Err(WorldError::Format("resolution must be positive".into()));
    }
    let layout = match f.layout {
        LayoutFile::Ground2d { floors, stair_links } => {
            let mut grids = vec![];
            for fl in floors {
                let n = fl.width * fl.height;
                let occ = rle_decode(&fl.occupancy, n)?.into_iter().map(|v| v != 0).collect();
                let labels = rle_decode(&fl.labels, n)?;
                grids.push(SemanticGrid2D::from_parts(fl.width, fl.height, occ, labels));
            }
            for l in &stair_links {
                for (floor, c) in [(l.floor_a, l.cell_a), (l.floor_b, l.cell_b)] {
                    if !grids.get(floor).is_some_and(|g| g.is_free(c[0], c[1])) {
                        return Err(WorldError::Format(format!("stair endpoint {c:?} on floor {floor} is not free")));
                    }
                }
            }
            Layout::Ground2d {
                floors: grids,
                stair_links,
            }
        }
        LayoutFile::Aerial3d {
            nx,
            ny,
            nz,
            occupancy,
            labels,
        } => {
            let n = nx * ny * nz;
            let occ = rle_decode(&occupancy, n)?.into_iter().map(|v| v != 0).collect();
            let labels = rle_decode(&labels, n)?;
            Layout::Aerial3d {
                voxels: VoxelGrid::from_parts(nx, ny, nz, occ, labels),
            }
        }
    };
    f.task.validate()?;
    Ok(WorldModel {
        name: f.name,
        resolution: f.resolution,
        floor_height: f.floor_height,
        labels: f.labels,
        layout,
        camera: f.camera,
        task: f.task,
    })
}

pub fn world_to_json(world: &WorldModel) -> String {
    serde_json::to_string(&to_file(world)).expect("world serializes")
}

pub fn world_from_json(text: &str) -> Result<WorldModel, WorldError> {
    let f: WorldFile = serde_json::from_str(text).map_err(|e| WorldError::Format(e.to_string()))?;
    from_file(f)
}

pub fn write_world(world: &WorldModel, path: &Path) -> Result<(), WorldError> {
    let mut text = serde_json::to_string_pretty(&to_file(world)).expect("world serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_world(path: &Path) -> Result<WorldModel, WorldError> {
    world_from_json(&std::fs::read_to_string(path)?)
}
