//! Seeded synthetic worlds: a grid of rooms joined by doors, with labeled
//! corner objects, optional extra floors joined by stairs, and a small voxel
//! city for aerial tasks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    CameraSpec, GeodesicField, Layout, SemanticGrid2D, StairLink, Subgoal, TaskFamily, TaskSpec, VoxelGrid,
    WorldError, WorldModel,
};
use crate::geometry::{normalize_deg, Point3, Pose};
use crate::planner::{VoxelPlanGrid, AERIAL_INFLATION_M, GROUND_INFLATION_M};

const ROOM_TYPES: [&str; 16] = [
    "bedroom",
    "kitchen",
    "living room",
    "bathroom",
    "office",
    "hallway",
    "dining room",
    "laundry room",
    "study",
    "nursery",
    "garage",
    "pantry",
    "library",
    "gym",
    "playroom",
    "sunroom",
];

const OBJECT_TYPES: [&str; 20] = [
    "sofa", "bed", "table", "chair", "tv", "plant", "cabinet", "toilet", "sink", "bookshelf", "piano", "fridge",
    "lamp", "desk", "wardrobe", "armchair", "bathtub", "stove", "washer", "dresser",
];

const LANDMARKS: [&str; 8] = [
    "red building",
    "water tower",
    "warehouse",
    "office tower",
    "church",
    "parking garage",
    "grain silo",
    "apartment block",
];

const WALL_CELLS: i64 = 2;
const DOOR_M: f64 = 1.0;
const STAIRS_LABEL: &str = "stairs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub family: TaskFamily,
    pub rooms_x: usize,
    pub rooms_y: usize,
    pub room_size_m: f64,
    pub resolution: f64,
    pub floors: usize,
    /// Keep the room graph a tree and require a side branch off the route.
    pub dead_end_rooms: bool,
    pub objects_per_room: usize,
    /// Upper bound on ordered subgoals for VLN, including the goal.
    pub max_subgoals: usize,
    pub success_radius: Option<f64>,
    pub max_retries: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            family: TaskFamily::ObjectNav,
            rooms_x: 3,
            rooms_y: 3,
            room_size_m: 3.0,
            resolution: 0.05,
            floors: 1,
            dead_end_rooms: false,
            objects_per_room: 1,
            max_subgoals: 4,
            success_radius: None,
            max_retries: 32,
        }
    }
}

impl GeneratorSpec {
    pub fn for_family(family: TaskFamily) -> Self {
        GeneratorSpec {
            family,
            ..GeneratorSpec::default()
        }
    }

    fn room_cells(&self) -> i64 {
        (self.room_size_m / self.resolution).round() as i64
    }

    fn grid_dims(&self) -> (i64, i64) {
        let n = self.room_cells();
        (
            self.rooms_x as i64 * (n + WALL_CELLS) + WALL_CELLS,
            self.rooms_y as i64 * (n + WALL_CELLS) + WALL_CELLS,
        )
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::GenerationFailed(m.to_string()));
        if self.family == TaskFamily::AerialVLN {
            return Ok(());
        }
        if self.floors == 0 || self.floors > 3 {
            return bad("floors must be between 1 and 3");
        }
        if self.rooms_x == 0 || self.rooms_y == 0 || self.rooms_x * self.rooms_y < 2 {
            return bad("need at least two rooms");
        }
        if !(self.resolution > 0.0) || !(self.room_size_m >= 2.0) {
            return bad("room size must be at least 2 m and resolution positive");
        }
        let (w, h) = self.grid_dims();
        if w > 256 || h > 256 {
            return bad("grid exceeds 256 x 256 cells");
        }
        if self.objects_per_room == 0 || self.objects_per_room > 4 {
            return bad("objects_per_room must be between 1 and 4");
        }
        if self.max_subgoals == 0 {
            return bad("max_subgoals must be positive");
        }
        Ok(())
    }
}

type Room = (usize, usize);

#[derive(Debug, Clone)]
struct PlacedObject {
    label: String,
    room: Room,
    floor: usize,
    viewpoint: Point3,
}

struct Floorplan {
    spec: GeneratorSpec,
    grids: Vec<SemanticGrid2D>,
    labels: BTreeMap<u32, String>,
    /// Door adjacency per floor.
    adjacency: Vec<BTreeMap<Room, BTreeSet<Room>>>,
    room_types: BTreeMap<Room, String>,
    objects: Vec<PlacedObject>,
    stairs: Vec<(StairLink, Room)>,
}

impl Floorplan {
    fn label_id(&mut self, text: &str) -> u32 {
        if let Some((id, _)) = self.labels.iter().find(|(_, t)| *t == text) {
            return *id;
        }
        let id = self.labels.keys().max().copied().unwrap_or(0) + 1;
        self.labels.insert(id, text.to_string());
        id
    }

    fn res(&self) -> f64 {
        self.spec.resolution
    }

    /// First interior cell of a room along each axis.
    fn room_origin(&self, r: Room) -> (i64, i64) {
        let n = self.spec.room_cells();
        (WALL_CELLS + r.0 as i64 * (n + WALL_CELLS), WALL_CELLS + r.1 as i64 * (n + WALL_CELLS))
    }

    fn room_center(&self, r: Room, floor: usize) -> Point3 {
        let (i0, j0) = self.room_origin(r);
        let n = self.spec.room_cells();
        let res = self.res();
        Point3::world(
            (i0 as f64 + n as f64 / 2.0) * res + res / 2.0,
            (j0 as f64 + n as f64 / 2.0) * res + res / 2.0,
            floor as f64 * 3.0,
        )
    }
}

fn rooms(spec: &GeneratorSpec) -> Vec<Room> {
    let mut out = vec![];
    for y in 0..spec.rooms_y {
        for x in 0..spec.rooms_x {
            out.push((x, y));
        }
    }
    out
}

fn neighbors(spec: &GeneratorSpec, r: Room) -> Vec<Room> {
    let mut out = vec![];
    if r.0 > 0 {
        out.push((r.0 - 1, r.1));
    }
    if r.0 + 1 < spec.rooms_x {
        out.push((r.0 + 1, r.1));
    }
    if r.1 > 0 {
        out.push((r.0, r.1 - 1));
    }
    if r.1 + 1 < spec.rooms_y {
        out.push((r.0, r.1 + 1));
    }
    out
}

/// Random depth-first spanning tree over the room grid, plus optional loops.
fn door_graph(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> BTreeMap<Room, BTreeSet<Room>> {
    let all = rooms(spec);
    let mut adj: BTreeMap<Room, BTreeSet<Room>> = all.iter().map(|r| (*r, BTreeSet::new())).collect();
    let start = all[rng.random_range(0..all.len())];
    let mut visited = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(&cur) = stack.last() {
        let mut options: Vec<Room> = neighbors(spec, cur).into_iter().filter(|n| !visited.contains(n)).collect();
        if options.is_empty() {
            stack.pop();
            continue;
        }
        options.shuffle(rng);
        let next = options[0];
        adj.get_mut(&cur).unwrap().insert(next);
        adj.get_mut(&next).unwrap().insert(cur);
        visited.insert(next);
        stack.push(next);
    }
    if !spec.dead_end_rooms {
        for r in &all {
            for n in neighbors(spec, *r) {
                if n > *r && !adj[r].contains(&n) && rng.random_bool(0.35) {
                    adj.get_mut(r).unwrap().insert(n);
                    adj.get_mut(&n).unwrap().insert(*r);
                }
            }
        }
    }
    adj
}

fn room_path(adj: &BTreeMap<Room, BTreeSet<Room>>, from: Room, to: Room) -> Option<Vec<Room>> {
    let mut prev: BTreeMap<Room, Room> = BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = BTreeSet::from([from]);
    while let Some(cur) = queue.pop_front() {
        if cur == to {
            let mut path = vec![to];
            while *path.last().unwrap() != from {
                path.push(prev[path.last().unwrap()]);
            }
            path.reverse();
            return Some(path);
        }
        for n in &adj[&cur] {
            if seen.insert(*n) {
                prev.insert(*n, cur);
                queue.push_back(*n);
            }
        }
    }
    None
}

fn build_floors(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Floorplan {
    let (w, h) = spec.grid_dims();
    let n = spec.room_cells();
    let mut plan = Floorplan {
        spec: spec.clone(),
        grids: vec![],
        labels: BTreeMap::new(),
        adjacency: vec![],
        room_types: BTreeMap::new(),
        objects: vec![],
        stairs: vec![],
    };
    let wall = plan.label_id("wall");
    let all = rooms(spec);
    let mut types: Vec<&str> = ROOM_TYPES.to_vec();
    types.shuffle(rng);
    for (k, r) in all.iter().enumerate() {
        let t = if k < types.len() {
            types[k].to_string()
        } else {
            format!("{} {}", types[k % types.len()], k / types.len() + 1)
        };
        plan.room_types.insert(*r, t);
    }
    let door_cells = (DOOR_M / spec.resolution).round() as i64;
    for _ in 0..spec.floors {
        let mut grid = SemanticGrid2D::new(w as usize, h as usize);
        // all walls first, then carve rooms
        grid.fill_rect(0, 0, w, h, true, wall);
        for r in &all {
            let (i0, j0) = plan.room_origin(*r);
            grid.fill_rect(i0, j0, i0 + n, j0 + n, false, 0);
        }
        let adj = door_graph(spec, rng);
        for (r, ns) in &adj {
            for nb in ns {
                if nb <= r {
                    continue;
                }
                let (i0, j0) = plan.room_origin(*r);
                let lo = n / 4;
                let hi = (3 * n) / 4 - door_cells;
                let off = if hi > lo { rng.random_range(lo..=hi) } else { (n - door_cells) / 2 };
                if nb.0 > r.0 {
                    grid.fill_rect(i0 + n, j0 + off, i0 + n + WALL_CELLS, j0 + off + door_cells, false, 0);
                } else {
                    grid.fill_rect(i0 + off, j0 + n, i0 + off + door_cells, j0 + n + WALL_CELLS, false, 0);
                }
            }
        }
        plan.grids.push(grid);
        plan.adjacency.push(adj);
    }
    plan
}

fn place_objects(plan: &mut Floorplan, rng: &mut ChaCha8Rng) {
    let n = plan.spec.room_cells();
    let res = plan.res();
    let mut catalog: Vec<&str> = OBJECT_TYPES.to_vec();
    catalog.shuffle(rng);
    let mut next = 0usize;
    for floor in 0..plan.spec.floors {
        for r in rooms(&plan.spec) {
            let mut corners = [(0, 0), (1, 0), (0, 1), (1, 1)];
            corners.shuffle(rng);
            for &(cx, cy) in corners.iter().take(plan.spec.objects_per_room) {
                let label = catalog[next % catalog.len()].to_string();
                next += 1;
                let id = plan.label_id(&label);
                let sx = rng.random_range((n * 12 / 100)..=(n * 20 / 100));
                let sy = rng.random_range((n * 12 / 100)..=(n * 20 / 100));
                let (i0, j0) = plan.room_origin(r);
                let (a0, a1) = if cx == 0 { (i0, i0 + sx) } else { (i0 + n - sx, i0 + n) };
                let (b0, b1) = if cy == 0 { (j0, j0 + sy) } else { (j0 + n - sy, j0 + n) };
                plan.grids[floor].fill_rect(a0, b0, a1, b1, true, id);
                // inner corner of the object, stepped diagonally into the room
                let (ix, dx) = if cx == 0 { (a1 as f64 * res, 1.0) } else { (a0 as f64 * res, -1.0) };
                let (iy, dy) = if cy == 0 { (b1 as f64 * res, 1.0) } else { (b0 as f64 * res, -1.0) };
                let step = 0.5 / std::f64::consts::SQRT_2;
                plan.objects.push(PlacedObject {
                    label,
                    room: r,
                    floor,
                    viewpoint: Point3::world(ix + dx * step, iy + dy * step, floor as f64 * 3.0),
                });
            }
        }
    }
}

fn place_stairs(plan: &mut Floorplan, start_room: Room, rng: &mut ChaCha8Rng) {
    let res = plan.res();
    let stairs = plan.label_id(STAIRS_LABEL);
    let candidates: Vec<Room> = rooms(&plan.spec).into_iter().filter(|r| *r != start_room).collect();
    for f in 0..plan.spec.floors.saturating_sub(1) {
        let room = candidates[rng.random_range(0..candidates.len())];
        let c = plan.room_center(room, 0);
        let cell = [((c.x + 0.45) / res).floor() as i64, ((c.y - 0.2) / res).floor() as i64];
        for floor in [f, f + 1] {
            let i0 = ((c.x + 0.3) / res).floor() as i64;
            let j0 = ((c.y + 0.3) / res).floor() as i64;
            let k = (0.3 / res).round() as i64;
            plan.grids[floor].fill_rect(i0, j0, i0 + k, j0 + k, true, stairs);
        }
        plan.stairs.push((
            StairLink {
                floor_a: f,
                cell_a: cell,
                floor_b: f + 1,
                cell_b: cell,
            },
            room,
        ));
    }
}

fn world_from_plan(plan: &Floorplan, name: String, task: TaskSpec) -> WorldModel {
    WorldModel {
        name,
        resolution: plan.spec.resolution,
        floor_height: 3.0,
        labels: plan.labels.clone(),
        layout: Layout::Ground2d {
            floors: plan.grids.clone(),
            stair_links: plan.stairs.iter().map(|(l, _)| *l).collect(),
        },
        camera: CameraSpec::ground(),
        task,
    }
}

fn is_reachable(world: &WorldModel, from: &Point3, to: &Point3) -> bool {
    let field = GeodesicField::build(world, &[*to], GROUND_INFLATION_M);
    field.distance(from, world.floor_of(from)).is_finite()
}

fn attempt_ground(seed: u64, spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<WorldModel, String> {
    let mut plan = build_floors(spec, rng);
    place_objects(&mut plan, rng);
    let all = rooms(spec);
    let start_room = all[rng.random_range(0..all.len())];
    place_stairs(&mut plan, start_room, rng);
    let start_pt = plan.room_center(start_room, 0);
    let yaw = normalize_deg(30.0 * rng.random_range(0..12) as f64);
    let start = Pose::new(start_pt.x, start_pt.y, 0.0, yaw, 0).map_err(|e| e.to_string())?;
    let top = spec.floors - 1;
    let radius = spec.success_radius.unwrap_or(spec.family.default_radius());

    // Route on the room graph, hopping floors through the stair rooms.
    let route_to = |plan: &Floorplan, goal_room: Room, goal_floor: usize| -> Option<Vec<(usize, Room)>> {
        let mut out = vec![];
        let mut cur = start_room;
        for f in 0..goal_floor {
            let stair_room = plan.stairs[f].1;
            out.extend(room_path(&plan.adjacency[f], cur, stair_room)?.into_iter().map(|r| (f, r)));
            cur = stair_room;
        }
        out.extend(room_path(&plan.adjacency[goal_floor], cur, goal_room)?.into_iter().map(|r| (goal_floor, r)));
        Some(out)
    };

    let target_objects: Vec<PlacedObject> = plan
        .objects
        .iter()
        .filter(|o| o.floor == top && !(o.floor == 0 && o.room == start_room))
        .cloned()
        .collect();
    let target = target_objects[rng.random_range(0..target_objects.len())].clone();
    let route = route_to(&plan, target.room, target.floor).ok_or("goal room not connected")?;
    if spec.dead_end_rooms {
        let on_route: BTreeSet<(usize, Room)> = route.iter().copied().collect();
        let branch = route[..route.len() - 1]
            .iter()
            .any(|(f, r)| plan.adjacency[*f][r].iter().any(|n| !on_route.contains(&(*f, *n))));
        if !branch || route.len() < 3 {
            return Err("route has no dead-end side branch".into());
        }
    }

    let name = format!("{}_{}", spec.family.as_str().to_lowercase(), seed);
    let room_name = |r: Room| plan.room_types[&r].clone();
    let mut task = TaskSpec {
        family: spec.family,
        instruction: String::new(),
        start,
        goal_positions: vec![],
        success_radius: radius,
        subgoal_radius: 1.0,
        ordered_subgoals: vec![],
        target_label: Some(target.label.clone()),
        eqa_answer: None,
        goal_bearing: None,
    };
    match spec.family {
        TaskFamily::ObjectNav => {
            task.goal_positions = target_objects
                .iter()
                .filter(|o| o.label == target.label)
                .map(|o| o.viewpoint)
                .collect();
            task.instruction = format!("Find the {}.", target.label);
        }
        TaskFamily::Eqa => {
            task.goal_positions = vec![target.viewpoint];
            task.eqa_answer = Some(target.label.clone());
            task.target_label = None;
            let floor_note = if spec.floors > 1 { " upstairs" } else { "" };
            task.instruction = format!("What object is in the corner of the {}{}?", room_name(target.room), floor_note);
        }
        TaskFamily::Vln => {
            let goal = target.viewpoint;
            let mut mids: Vec<Subgoal> = vec![];
            let mut prev_floor = 0;
            for (f, r) in route.iter().skip(1) {
                if *f != prev_floor {
                    prev_floor = *f;
                    continue;
                }
                let p = plan.room_center(*r, *f);
                let far_from_goal = (*f != target.floor) || p.planar_distance(&goal).unwrap_or(0.0) >= radius + 1.5;
                let far_from_start = p.planar_distance(&start_pt).unwrap_or(0.0) >= 1.5 || *f != 0;
                if far_from_goal && far_from_start {
                    let is_stair = plan.stairs.get(*f).is_some_and(|(_, sr)| sr == r) && *f < target.floor;
                    let description = if is_stair {
                        format!("go to the stairs in the {}", room_name(*r))
                    } else {
                        format!("walk through the {}", room_name(*r))
                    };
                    mids.push(Subgoal { description, position: p });
                }
            }
            let keep = spec.max_subgoals.saturating_sub(1);
            if mids.len() > keep {
                let picked: Vec<Subgoal> = (0..keep)
                    .map(|i| mids[((i + 1) * mids.len()) / (keep + 1)].clone())
                    .collect();
                mids = picked;
            }
            let mut subgoals = mids;
            subgoals.push(Subgoal {
                description: format!("stop next to the {} in the {}", target.label, room_name(target.room)),
                position: goal,
            });
            let parts: Vec<String> = subgoals.iter().map(|s| s.description.clone()).collect();
            let mut text = parts.join(", then ");
            if let Some(first) = text.get(0..1) {
                text = first.to_uppercase() + &text[1..];
            }
            task.instruction = format!("{text}.");
            task.goal_positions = vec![goal];
            task.ordered_subgoals = subgoals;
        }
        TaskFamily::AerialVLN => unreachable!("aerial worlds are generated separately"),
    }
    let world = world_from_plan(&plan, name, task);
    world.task.validate().map_err(|e| e.to_string())?;

    // Reachability on the inflated true map, leg by leg for ordered subgoals.
    let mut prev = start_pt;
    let legs: Vec<Point3> = if world.task.ordered_subgoals.is_empty() {
        vec![world.task.goal_positions[0]]
    } else {
        world.task.ordered_subgoals.iter().map(|s| s.position).collect()
    };
    for p in legs {
        if !is_reachable(&world, &prev, &p) {
            return Err("goal not reachable on the inflated map".into());
        }
        prev = p;
    }
    let d = GeodesicField::for_task(&world).pose_distance(&start);
    if !(d > world.task.success_radius + 1.0) {
        return Err("goal too close to the start".into());
    }
    Ok(world)
}

fn attempt_aerial(seed: u64, spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<WorldModel, String> {
    let (nx, ny, nz) = (64usize, 64usize, 32usize);
    let mut voxels = VoxelGrid::new(nx, ny, nz);
    let mut labels = BTreeMap::new();
    labels.insert(1u32, "ground".to_string());
    voxels.fill_box([0, 0, 0], [nx as i64, ny as i64, 1], true, 1);
    let count = rng.random_range(4..=7);
    let mut names: Vec<&str> = LANDMARKS.to_vec();
    names.shuffle(rng);
    let mut boxes = vec![];
    for (k, name) in names.iter().take(count).enumerate() {
        let id = k as u32 + 2;
        labels.insert(id, name.to_string());
        let sx = rng.random_range(4..=10i64);
        let sy = rng.random_range(4..=10i64);
        let h = rng.random_range(6..=20i64);
        let x0 = rng.random_range(4..(nx as i64 - 4 - sx));
        let y0 = rng.random_range(4..(ny as i64 - 4 - sy));
        voxels.fill_box([x0, y0, 1], [x0 + sx, y0 + sy, 1 + h], true, id);
        boxes.push((name.to_string(), [x0, y0], [x0 + sx, y0 + sy], h));
    }
    let altitude = 10.5;
    let mut start = None;
    for _ in 0..50 {
        let x = rng.random_range(4..60) as f64 + 0.5;
        let y = rng.random_range(4..60) as f64 + 0.5;
        let clear = (-2..=2).all(|di: i64| {
            (-2..=2).all(|dj: i64| voxels.is_free([x as i64 + di, y as i64 + dj, altitude as i64]))
        });
        if clear {
            start = Some((x, y));
            break;
        }
    }
    let (sx, sy) = start.ok_or("no free start")?;
    let yaw = normalize_deg(30.0 * rng.random_range(0..12) as f64);
    let start = Pose::new(sx, sy, altitude, yaw, 0).map_err(|e| e.to_string())?;
    let mut far: Vec<_> = boxes
        .iter()
        .filter(|(_, lo, hi, _)| {
            let cx = (lo[0] + hi[0]) as f64 / 2.0;
            let cy = (lo[1] + hi[1]) as f64 / 2.0;
            (cx - sx).hypot(cy - sy) >= 20.0
        })
        .collect();
    if far.is_empty() {
        return Err("no landmark far enough from the start".into());
    }
    far.sort_by(|a, b| a.0.cmp(&b.0));
    let (label, lo, hi, _) = far[rng.random_range(0..far.len())].clone();
    // Goal: 3 m off the landmark face that points toward the start.
    let cx = (lo[0] + hi[0]) as f64 / 2.0;
    let cy = (lo[1] + hi[1]) as f64 / 2.0;
    let (dx, dy) = (sx - cx, sy - cy);
    let goal = if dx.abs() >= dy.abs() {
        let x = if dx > 0.0 { hi[0] as f64 + 3.5 } else { lo[0] as f64 - 3.5 };
        Point3::world(x, cy.floor() + 0.5, 8.5)
    } else {
        let y = if dy > 0.0 { hi[1] as f64 + 3.5 } else { lo[1] as f64 - 3.5 };
        Point3::world(cx.floor() + 0.5, y, 8.5)
    };
    let gv = [goal.x.floor() as i64, goal.y.floor() as i64, goal.z.floor() as i64];
    if !voxels.is_free(gv) {
        return Err("goal voxel occupied".into());
    }
    // reachability within the flight corridor
    let grid = VoxelPlanGrid::from_truth(&voxels, 1.0).inflate(AERIAL_INFLATION_M);
    let sv = [sx.floor() as i64, sy.floor() as i64, altitude.floor() as i64];
    if grid.is_blocked(gv) || grid.is_blocked(sv) {
        return Err("start or goal inside inflated obstacles".into());
    }
    let mut seen = BTreeSet::from([sv]);
    let mut queue = VecDeque::from([sv]);
    let mut found = false;
    while let Some(c) = queue.pop_front() {
        if c == gv {
            found = true;
            break;
        }
        for (a, s) in [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)] {
            let mut n = c;
            n[a] += s;
            if n[2] < 2 || n[2] > 39 || grid.is_blocked(n) {
                continue;
            }
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    if !found {
        return Err("goal not reachable in the flight corridor".into());
    }
    let (s, c) = yaw.to_radians().sin_cos();
    let w = [goal.x - sx, goal.y - sy, goal.z - altitude];
    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let bearing = [(c * w[0] + s * w[1]) / n, (-s * w[0] + c * w[1]) / n, w[2] / n];
    let radius = spec.success_radius.unwrap_or(TaskFamily::AerialVLN.default_radius());
    let task = TaskSpec {
        family: TaskFamily::AerialVLN,
        instruction: format!("Fly to the {label} and stop beside it."),
        start,
        goal_positions: vec![goal],
        success_radius: radius,
        subgoal_radius: 1.0,
        ordered_subgoals: vec![Subgoal {
            description: format!("stop beside the {label}"),
            position: goal,
        }],
        target_label: Some(label),
        eqa_answer: None,
        goal_bearing: Some(bearing),
    };
    Ok(WorldModel {
        name: format!("aerialvln_{seed}"),
        resolution: 1.0,
        floor_height: 0.0,
        labels,
        layout: Layout::Aerial3d { voxels },
        camera: CameraSpec::aerial(),
        task,
    })
}

pub fn generate_world(seed: u64, spec: &GeneratorSpec) -> Result<WorldModel, WorldError> {
    spec.validate()?;
    let mut last = String::new();
    for attempt in 0..spec.max_retries.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(attempt as u64));
        let result = if spec.family == TaskFamily::AerialVLN {
            attempt_aerial(seed, spec, &mut rng)
        } else {
            attempt_ground(seed, spec, &mut rng)
        };
        match result {
            Ok(w) => return Ok(w),
            Err(e) => last = e,
        }
    }
    Err(WorldError::GenerationFailed(format!(
        "no valid world after {} attempts: {last}",
        spec.max_retries.max(1)
    )))
}
