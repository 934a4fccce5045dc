//! Waypoint and virtual-agent extraction.
//!
//! Each perception tick an agent renders a depth image, folds it into its
//! local map, plans a 3D A* path on the inflated map and string-pulls that
//! path to a single target waypoint `w1`. Obstacle virtual agents are then
//! read off the (uninflated) map:
//!
//! * `w2` – occupied point nearest the agent,
//! * `w3` – occupied point nearest the segment agent → `w1`,
//! * `w4` – point of that segment nearest `w3`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{closest_point_primitive_to_segment, nearest_point_on_segment, Segment, Vec3};
use crate::mapping::{nearest_occupied, traverse, Cell, GridConfig, OccupancyGrid, VoxelIndex};
use crate::world::{line_of_sight, render_depth, CameraIntrinsics, CameraPose, ObstacleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("start voxel is occupied")]
    StartOccupied,
    #[error("start lies outside the grid window")]
    StartOutside,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VirtualAgents {
    pub w2: Option<Vec3>,
    pub w3: Option<Vec3>,
    pub w4: Option<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionOutput {
    pub w1: Vec3,
    pub w2: Option<Vec3>,
    pub w3: Option<Vec3>,
    pub w4: Option<Vec3>,
    pub goal_visible: bool,
}

impl PerceptionOutput {
    /// Output that heads straight for the goal with no obstacle context.
    pub fn toward(goal: Vec3) -> Self {
        Self { w1: goal, w2: None, w3: None, w4: None, goal_visible: true }
    }

    pub fn virtual_agents(&self) -> VirtualAgents {
        VirtualAgents { w2: self.w2, w3: self.w3, w4: self.w4 }
    }
}

/// Voxel path from the start voxel to the (possibly retargeted) goal voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub voxels: Vec<VoxelIndex>,
    pub points: Vec<Vec3>,
    pub cost: f64,
}

impl GridPath {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Key {
    f: f64,
    h: f64,
    node: u32,
}

impl Eq for Key {}

impl Ord for Key {
    // reversed so BinaryHeap pops the smallest (f, h, index)
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then_with(|| o.h.total_cmp(&self.h))
            .then_with(|| o.node.cmp(&self.node))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// 26-neighborhood offsets with their unit-resolution lengths.
pub fn neighbor_offsets() -> Vec<([i64; 3], f64)> {
    let mut out = Vec::with_capacity(26);
    for a in -1i64..=1 {
        for b in -1i64..=1 {
            for c in -1i64..=1 {
                if (a, b, c) != (0, 0, 0) {
                    out.push(([a, b, c], (((a * a + b * b + c * c) as f64).sqrt())));
                }
            }
        }
    }
    out
}

/// Reusable A* scratch buffers sized to one grid.
#[derive(Debug, Default, Clone)]
pub struct Planner {
    g: Vec<f64>,
    parent: Vec<u32>,
    seen: Vec<u32>,
    closed: Vec<u32>,
    generation: u32,
}

impl Planner {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, n: usize) {
        if self.g.len() != n {
            self.g = vec![0.0; n];
            self.parent = vec![0; n];
            self.seen = vec![0; n];
            self.closed = vec![0; n];
            self.generation = 0;
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.seen.iter_mut().for_each(|s| *s = 0);
            self.closed.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
    }

    /// Cost-minimal 26-connected path with Euclidean edge costs. A goal
    /// outside the window is replaced by the window-boundary point on the
    /// start→goal line; an occupied goal voxel by the nearest free voxel
    /// within two voxels. `Ok(None)` means unreachable.
    pub fn plan(&mut self, grid: &OccupancyGrid, start: Vec3, goal: Vec3) -> Result<Option<GridPath>, PlanError> {
        let start_idx = grid.index_of(start).ok_or(PlanError::StartOutside)?;
        if grid.is_occupied(start_idx) {
            return Err(PlanError::StartOccupied);
        }
        let Some(goal_idx) = goal_voxel(grid, start, goal) else {
            return Ok(None);
        };
        let dims = grid.dims();
        let res = grid.resolution();
        let n = grid.len();
        self.reset(n);
        let gen = self.generation;
        let s = grid.linear(start_idx) as u32;
        let t = grid.linear(goal_idx) as u32;
        let goal_c = grid.center_of(goal_idx);
        let offsets = neighbor_offsets();
        let heuristic = |idx: VoxelIndex| grid.center_of(idx).distance(goal_c);

        let mut heap = BinaryHeap::new();
        self.g[s as usize] = 0.0;
        self.seen[s as usize] = gen;
        let h0 = heuristic(start_idx);
        heap.push(Key { f: h0, h: h0, node: s });
        while let Some(Key { node, .. }) = heap.pop() {
            let u = node as usize;
            if self.closed[u] == gen {
                continue;
            }
            self.closed[u] = gen;
            if node == t {
                return Ok(Some(self.reconstruct(grid, s, t)));
            }
            let idx = grid.unlinear(u);
            let gu = self.g[u];
            for (o, len) in &offsets {
                let a = idx[0] as i64 + o[0];
                let b = idx[1] as i64 + o[1];
                let c = idx[2] as i64 + o[2];
                if a < 0 || b < 0 || c < 0 || a >= dims[0] as i64 || b >= dims[1] as i64 || c >= dims[2] as i64 {
                    continue;
                }
                let nidx = [a as usize, b as usize, c as usize];
                let v = grid.linear(nidx);
                if self.closed[v] == gen || grid.is_occupied_linear(v) {
                    continue;
                }
                let cand = gu + len * res;
                if self.seen[v] != gen || cand < self.g[v] {
                    self.seen[v] = gen;
                    self.g[v] = cand;
                    self.parent[v] = node;
                    let h = heuristic(nidx);
                    heap.push(Key { f: cand + h, h, node: v as u32 });
                }
            }
        }
        Ok(None)
    }

    fn reconstruct(&self, grid: &OccupancyGrid, s: u32, t: u32) -> GridPath {
        let mut nodes = vec![t];
        let mut cur = t;
        while cur != s {
            cur = self.parent[cur as usize];
            nodes.push(cur);
        }
        nodes.reverse();
        let voxels: Vec<VoxelIndex> = nodes.iter().map(|&l| grid.unlinear(l as usize)).collect();
        let points = voxels.iter().map(|&v| grid.center_of(v)).collect();
        GridPath { voxels, points, cost: self.g[t as usize] }
    }
}

/// See [`Planner::plan`].
pub fn plan_path(grid: &OccupancyGrid, start: Vec3, goal: Vec3) -> Result<Option<GridPath>, PlanError> {
    Planner::new().plan(grid, start, goal)
}

/// Point where the segment `start`→`goal` leaves the window, pulled in by a
/// small margin so it lands inside the last voxel.
pub fn project_into_window(grid: &OccupancyGrid, start: Vec3, goal: Vec3) -> Vec3 {
    let b = grid.bounds();
    if b.contains(goal) && grid.index_of(goal).is_some() {
        return goal;
    }
    let d = goal - start;
    let margin = 1e-6 * grid.resolution();
    let mut s_max = 1.0f64;
    for ax in 0..3 {
        let da = d.component(ax);
        let pa = start.component(ax);
        if da > 0.0 {
            s_max = s_max.min((b.max.component(ax) - margin - pa) / da);
        } else if da < 0.0 {
            s_max = s_max.min((b.min.component(ax) + margin - pa) / da);
        }
    }
    start + d * s_max.max(0.0)
}

fn goal_voxel(grid: &OccupancyGrid, start: Vec3, goal: Vec3) -> Option<VoxelIndex> {
    let target = project_into_window(grid, start, goal);
    let idx = grid.index_of(target)?;
    if !grid.is_occupied(idx) {
        return Some(idx);
    }
    nearest_free(grid, idx, 2)
}

/// Nearest non-occupied voxel within `radius` voxels (Euclidean, in voxel
/// units); ties go to the lexicographically smaller index.
pub fn nearest_free(grid: &OccupancyGrid, idx: VoxelIndex, radius: i64) -> Option<VoxelIndex> {
    let mut best: Option<(i64, VoxelIndex)> = None;
    for a in -radius..=radius {
        for b in -radius..=radius {
            for c in -radius..=radius {
                let d2 = a * a + b * b + c * c;
                if d2 > radius * radius {
                    continue;
                }
                let Some(n) = grid.checked([idx[0] as i64 + a, idx[1] as i64 + b, idx[2] as i64 + c]) else {
                    continue;
                };
                if grid.is_occupied(n) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bi)) => d2 < bd || (d2 == bd && n < bi),
                };
                if better {
                    best = Some((d2, n));
                }
            }
        }
    }
    best.map(|(_, n)| n)
}

/// Straight-line visibility through the grid. Occupied cells at the very
/// start of the line (the agent already inside an inflated margin) are
/// ignored; any occupied cell after the first non-occupied one blocks.
/// Cells outside the window count as open.
pub fn grid_line_of_sight(grid: &OccupancyGrid, from: Vec3, to: Vec3) -> bool {
    let mut left_start = false;
    let mut blocked = false;
    traverse(grid.origin(), grid.resolution(), from, to, &mut |lat| {
        if blocked {
            return;
        }
        let occ = grid.checked(lat).map_or(false, |i| grid.is_occupied(i));
        if occ && left_start {
            blocked = true;
        } else if !occ {
            left_start = true;
        }
    });
    !blocked
}

/// Farthest path vertex visible from `agent_pos` (string pulling). When the
/// final vertex is visible and stands for the goal itself (goal outside the
/// window or in that very voxel), the goal is returned.
pub fn select_waypoint(path: &GridPath, agent_pos: Vec3, goal: Vec3, grid: &OccupancyGrid) -> Vec3 {
    assert!(!path.is_empty(), "select_waypoint needs a non-empty path");
    let last = path.len() - 1;
    for i in (0..path.len()).rev() {
        if i == 0 || grid_line_of_sight(grid, agent_pos, path.points[i]) {
            if i == last {
                let goal_voxel = grid.index_of(goal);
                if goal_voxel.is_none() || goal_voxel == Some(path.voxels[last]) {
                    return goal;
                }
            }
            return path.points[i];
        }
    }
    unreachable!()
}

/// Virtual agents from the sensed map, restricted to occupied cells within
/// `sense_radius` of the agent.
pub fn compute_virtual_agents(agent_pos: Vec3, w1: Vec3, grid: &OccupancyGrid, sense_radius: f64) -> VirtualAgents {
    let occ = grid.occupied_within(agent_pos, sense_radius);
    if occ.is_empty() {
        return VirtualAgents::default();
    }
    let seg = Segment::new(agent_pos, w1);
    let w2 = nearest_occupied(grid, agent_pos, sense_radius);
    let mut best: Option<(f64, Vec3)> = None;
    for idx in occ {
        let c = grid.center_of(idx);
        let d = nearest_point_on_segment(&seg, c).distance_squared(c);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, c));
        }
    }
    let w3 = best.map(|(_, c)| c);
    let w4 = w3.map(|c| nearest_point_on_segment(&seg, c));
    VirtualAgents { w2, w3, w4 }
}

/// Virtual agents from exact obstacle geometry instead of the sensed map.
pub fn compute_virtual_agents_analytic(
    agent_pos: Vec3,
    w1: Vec3,
    obstacles: &ObstacleSet,
    sense_radius: f64,
) -> VirtualAgents {
    let seg = Segment::new(agent_pos, w1);
    let mut w2: Option<(f64, Vec3)> = None;
    let mut w3: Option<(f64, Vec3)> = None;
    for prim in obstacles.near(agent_pos, sense_radius) {
        let q = crate::geometry::nearest_point_on_primitive(prim, agent_pos);
        let d = q.distance_squared(agent_pos);
        if w2.map_or(true, |(bd, _)| d < bd) {
            w2 = Some((d, q));
        }
        let (p, t) = closest_point_primitive_to_segment(prim, &seg);
        let d = p.distance_squared(seg.point_at(t));
        if w3.map_or(true, |(bd, _)| d < bd) {
            w3 = Some((d, p));
        }
    }
    let w3 = w3.map(|(_, p)| p);
    VirtualAgents { w2: w2.map(|(_, p)| p), w3, w4: w3.map(|p| nearest_point_on_segment(&seg, p)) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum VirtualAgentSource {
    #[default]
    Map,
    /// Exact geometry; for controlled experiments only.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PerceptionConfig {
    pub grid: GridConfig,
    pub camera: CameraIntrinsics,
    pub sense_radius: f64,
    #[serde(default)]
    pub source: VirtualAgentSource,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            camera: CameraIntrinsics::default(),
            sense_radius: 5.0,
            source: VirtualAgentSource::Map,
        }
    }
}

/// One agent's perception state: its local map and planner scratch.
#[derive(Debug, Clone)]
pub struct Perceiver {
    cfg: PerceptionConfig,
    grid: OccupancyGrid,
    planner: Planner,
    last_w1: Option<Vec3>,
}

impl Perceiver {
    pub fn new(cfg: PerceptionConfig, position: Vec3) -> Self {
        Self { grid: OccupancyGrid::centered(position, &cfg.grid), cfg, planner: Planner::new(), last_w1: None }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn config(&self) -> &PerceptionConfig {
        &self.cfg
    }

    /// Sense and update the local map from a camera at `position` facing
    /// `yaw`.
    pub fn sense(&mut self, position: Vec3, yaw: f64, world: &ObstacleSet) {
        self.grid.recenter(position);
        let img = render_depth(&CameraPose::new(position, yaw), &self.cfg.camera, world);
        self.grid.integrate_depth(&img);
    }

    /// Full tick: sense, plan, pick `w1`, derive virtual agents. With
    /// `plan == false` the waypoint is pinned to the goal.
    pub fn perceive(&mut self, position: Vec3, yaw: f64, goal: Vec3, world: &ObstacleSet, plan: bool) -> PerceptionOutput {
        self.sense(position, yaw, world);
        let goal_los = line_of_sight(position, goal, world);
        let w1 = if plan { self.plan_waypoint(position, goal, world) } else { goal };
        let goal_visible = goal_los && w1 == goal;
        let w1 = if goal_visible { goal } else { w1 };
        let va = match self.cfg.source {
            VirtualAgentSource::Map => compute_virtual_agents(position, w1, &self.grid, self.cfg.sense_radius),
            VirtualAgentSource::Analytic => {
                compute_virtual_agents_analytic(position, w1, world, self.cfg.sense_radius)
            }
        };
        PerceptionOutput { w1, w2: va.w2, w3: va.w3, w4: va.w4, goal_visible }
    }

    fn plan_waypoint(&mut self, position: Vec3, goal: Vec3, world: &ObstacleSet) -> Vec3 {
        let mut inflated = self.grid.inflate(self.cfg.grid.inflation).expect("local map is never inflated");
        inflated.block_outside(&world.world_bounds);
        let mut start = position;
        if let Some(idx) = inflated.index_of(position) {
            if inflated.get(idx) == Cell::Occupied {
                if let Some(free) = nearest_free(&inflated, idx, 4) {
                    start = inflated.center_of(free);
                }
            }
        }
        let w1 = match self.planner.plan(&inflated, start, goal) {
            Ok(Some(path)) => Some(select_waypoint(&path, position, goal, &inflated)),
            _ => None,
        };
        let w1 = w1.or(self.last_w1).unwrap_or(goal);
        self.last_w1 = Some(w1);
        w1
    }
}
