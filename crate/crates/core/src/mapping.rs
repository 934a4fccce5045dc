//! Per-agent local occupancy grid built from depth images.
//!
//! The grid is a sliding window on a world-aligned voxel lattice. Cells are
//! unknown, free or occupied; an occupied cell is cleared only after two
//! consecutive images observe it free.

use std::fmt::Write as _;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::world::DepthImage;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("grid is already inflated")]
    AlreadyInflated,
    #[error("inflation margin must be finite and non-negative")]
    BadMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Unknown,
    Free,
    Occupied,
}

impl Cell {
    fn as_str(self) -> &'static str {
        match self {
            Cell::Unknown => "unknown",
            Cell::Free => "free",
            Cell::Occupied => "occupied",
        }
    }
}

/// Voxel coordinates `(i, j, k)`; ordering is lexicographic.
pub type VoxelIndex = [usize; 3];

/// Free observations needed to clear an occupied cell.
const CLEAR_AFTER: u8 = 2;

/// Window and lattice parameters for an agent's local map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GridConfig {
    pub resolution: f64,
    /// Window extent in meters along x, y, z.
    pub extent: Vec3,
    /// Inflation margin applied before planning.
    pub inflation: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 0.25, extent: Vec3::new(20.0, 20.0, 10.0), inflation: 0.5 }
    }
}

impl GridConfig {
    pub fn dims(&self) -> [usize; 3] {
        [
            (self.extent.x / self.resolution).round() as usize,
            (self.extent.y / self.resolution).round() as usize,
            (self.extent.z / self.resolution).round() as usize,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    cells: Vec<Cell>,
    free_streak: Vec<u8>,
    inflated: bool,
    // per-integration dedup stamps; never copied into derived grids
    stamps: Vec<u32>,
    epoch: u32,
}

impl PartialEq for OccupancyGrid {
    fn eq(&self, o: &Self) -> bool {
        self.origin == o.origin
            && self.resolution == o.resolution
            && self.dims == o.dims
            && self.cells == o.cells
            && self.inflated == o.inflated
    }
}

impl OccupancyGrid {
    /// All-unknown grid whose minimum corner is `origin`.
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3]) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        let n = dims[0] * dims[1] * dims[2];
        Self {
            origin,
            resolution,
            dims,
            cells: vec![Cell::Unknown; n],
            free_streak: vec![0; n],
            inflated: false,
            stamps: Vec::new(),
            epoch: 0,
        }
    }

    /// Window of `cfg.extent` around `center`, snapped to the world lattice.
    pub fn centered(center: Vec3, cfg: &GridConfig) -> Self {
        let dims = cfg.dims();
        let origin = snapped_origin(center, cfg.resolution, dims);
        Self::new(origin, cfg.resolution, dims)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn is_inflated(&self) -> bool {
        self.inflated
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            self.dims[0] as f64 * self.resolution,
            self.dims[1] as f64 * self.resolution,
            self.dims[2] as f64 * self.resolution,
        );
        Aabb::new(self.origin, self.origin + ext)
    }

    pub fn linear(&self, idx: VoxelIndex) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn unlinear(&self, l: usize) -> VoxelIndex {
        let k = l % self.dims[2];
        let j = (l / self.dims[2]) % self.dims[1];
        let i = l / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    /// Unbounded lattice coordinates of `p`.
    pub fn lattice(&self, p: Vec3) -> [i64; 3] {
        [
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
            ((p.z - self.origin.z) / self.resolution).floor() as i64,
        ]
    }

    pub fn checked(&self, l: [i64; 3]) -> Option<VoxelIndex> {
        let ok = (0..3).all(|a| l[a] >= 0 && (l[a] as usize) < self.dims[a]);
        ok.then(|| [l[0] as usize, l[1] as usize, l[2] as usize])
    }

    pub fn index_of(&self, p: Vec3) -> Option<VoxelIndex> {
        if !p.is_finite() {
            return None;
        }
        self.checked(self.lattice(p))
    }

    pub fn center_of(&self, idx: VoxelIndex) -> Vec3 {
        self.origin
            + Vec3::new(
                (idx[0] as f64 + 0.5) * self.resolution,
                (idx[1] as f64 + 0.5) * self.resolution,
                (idx[2] as f64 + 0.5) * self.resolution,
            )
    }

    pub fn get(&self, idx: VoxelIndex) -> Cell {
        self.cells[self.linear(idx)]
    }

    pub fn set(&mut self, idx: VoxelIndex, c: Cell) {
        let l = self.linear(idx);
        self.cells[l] = c;
        self.free_streak[l] = 0;
    }

    pub fn cell_at(&self, p: Vec3) -> Option<Cell> {
        self.index_of(p).map(|i| self.get(i))
    }

    pub fn is_occupied(&self, idx: VoxelIndex) -> bool {
        self.get(idx) == Cell::Occupied
    }

    pub(crate) fn is_occupied_linear(&self, l: usize) -> bool {
        self.cells[l] == Cell::Occupied
    }

    pub fn occupied(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Cell::Occupied)
            .map(|(l, _)| self.unlinear(l))
    }

    pub fn count(&self, c: Cell) -> usize {
        self.cells.iter().filter(|x| **x == c).count()
    }

    /// Slide the window so it is centered on `center`. Cells leaving the
    /// window are forgotten; entering cells are unknown.
    pub fn recenter(&mut self, center: Vec3) {
        let new_origin = snapped_origin(center, self.resolution, self.dims);
        let shift = [
            ((new_origin.x - self.origin.x) / self.resolution).round() as i64,
            ((new_origin.y - self.origin.y) / self.resolution).round() as i64,
            ((new_origin.z - self.origin.z) / self.resolution).round() as i64,
        ];
        if shift == [0, 0, 0] {
            return;
        }
        let mut cells = vec![Cell::Unknown; self.cells.len()];
        let mut streak = vec![0u8; self.cells.len()];
        let d = self.dims.map(|n| n as i64);
        // destination k range whose source k + shift stays inside
        let k_lo = (-shift[2]).clamp(0, d[2]);
        let k_hi = (d[2] - shift[2]).clamp(0, d[2]);
        if k_lo < k_hi {
            for i in 0..d[0] {
                let si = i + shift[0];
                if si < 0 || si >= d[0] {
                    continue;
                }
                for j in 0..d[1] {
                    let sj = j + shift[1];
                    if sj < 0 || sj >= d[1] {
                        continue;
                    }
                    let dst = ((i * d[1] + j) * d[2]) as usize;
                    let src = ((si * d[1] + sj) * d[2]) as usize;
                    let (a, b) = (k_lo as usize, k_hi as usize);
                    let sa = (k_lo + shift[2]) as usize;
                    let sb = (k_hi + shift[2]) as usize;
                    cells[dst + a..dst + b].copy_from_slice(&self.cells[src + sa..src + sb]);
                    streak[dst + a..dst + b].copy_from_slice(&self.free_streak[src + sa..src + sb]);
                }
            }
        }
        self.cells = cells;
        self.free_streak = streak;
        self.origin = self.origin
            + Vec3::new(shift[0] as f64, shift[1] as f64, shift[2] as f64) * self.resolution;
    }

    /// Fold one depth image into the map.
    pub fn integrate_depth(&mut self, img: &DepthImage) {
        if self.stamps.len() != self.cells.len() {
            self.stamps = vec![0; self.cells.len()];
            self.epoch = 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        // stamps: 2*epoch marks "hit in this image", 2*epoch+1 "seen free"
        let hit_mark = self.epoch.wrapping_mul(2);
        let free_mark = hit_mark.wrapping_add(1);
        let k = img.intrinsics;
        let origin = img.pose.position;

        let mut ends = Vec::with_capacity(k.width * k.height);
        for v in 0..k.height {
            for u in 0..k.width {
                let d = img.depth(u, v);
                let dir = img.ray_dir(u, v);
                if d.is_finite() {
                    let hit = origin + dir * d;
                    if let Some(idx) = self.index_of(hit) {
                        let l = self.linear(idx);
                        self.cells[l] = Cell::Occupied;
                        self.free_streak[l] = 0;
                        self.stamps[l] = hit_mark;
                    }
                    ends.push((hit, true));
                } else {
                    ends.push((origin + dir * k.max_range, false));
                }
            }
        }
        for (end, is_hit) in ends {
            self.carve(origin, end, is_hit, hit_mark, free_mark);
        }
    }

    fn carve_cell(&mut self, l: usize, hit_mark: u32, free_mark: u32) {
        if self.stamps[l] == hit_mark || self.stamps[l] == free_mark {
            return;
        }
        self.stamps[l] = free_mark;
        match self.cells[l] {
            Cell::Occupied => {
                self.free_streak[l] += 1;
                if self.free_streak[l] >= CLEAR_AFTER {
                    self.cells[l] = Cell::Free;
                    self.free_streak[l] = 0;
                }
            }
            _ => self.cells[l] = Cell::Free,
        }
    }

    /// Marks cells on the ray free, excluding the hit cell. Same cell order
    /// as [`traverse`]; once the ray leaves the window it cannot come back,
    /// so the walk stops there.
    fn carve(&mut self, origin: Vec3, end: Vec3, is_hit: bool, hit_mark: u32, free_mark: u32) {
        let last = self.lattice(end);
        let start = self.lattice(origin);
        if self.checked(start).is_none() {
            let (grid_origin, res) = (self.origin, self.resolution);
            traverse(grid_origin, res, origin, end, &mut |lat| {
                if is_hit && lat == last {
                    return;
                }
                if let Some(idx) = self.checked(lat) {
                    let l = self.linear(idx);
                    self.carve_cell(l, hit_mark, free_mark);
                }
            });
            return;
        }
        let a = (origin - self.origin) / self.resolution;
        let b = (end - self.origin) / self.resolution;
        let d = b - a;
        let dims = self.dims.map(|n| n as i64);
        let stride = [dims[1] * dims[2], dims[2], 1];
        let mut cell = start;
        let mut l = (cell[0] * stride[0] + cell[1] * stride[1] + cell[2]) as usize;
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            let da = d.component(ax);
            let pa = a.component(ax);
            if da > 0.0 {
                step[ax] = 1;
                t_delta[ax] = 1.0 / da;
                t_max[ax] = ((cell[ax] + 1) as f64 - pa) / da;
            } else if da < 0.0 {
                step[ax] = -1;
                t_delta[ax] = -1.0 / da;
                t_max[ax] = (pa - cell[ax] as f64) / -da;
            }
        }
        let budget: i64 = (0..3).map(|ax| (last[ax] - cell[ax]).abs()).sum();
        if !(is_hit && cell == last) {
            self.carve_cell(l, hit_mark, free_mark);
        }
        for _ in 0..budget {
            if cell == last {
                break;
            }
            let ax = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            cell[ax] += step[ax];
            if cell[ax] < 0 || cell[ax] >= dims[ax] {
                return;
            }
            t_max[ax] += t_delta[ax];
            l = (l as i64 + step[ax] * stride[ax]) as usize;
            if !(is_hit && cell == last) {
                self.carve_cell(l, hit_mark, free_mark);
            }
        }
    }

    /// Dilate occupied space by `delta`: a cell is occupied in the result iff
    /// its center lies within `delta` of an occupied cell center. Other cells
    /// keep their state.
    pub fn inflate(&self, delta: f64) -> Result<OccupancyGrid, MappingError> {
        if self.inflated {
            return Err(MappingError::AlreadyInflated);
        }
        if !delta.is_finite() || delta < 0.0 {
            return Err(MappingError::BadMargin);
        }
        let mut out = OccupancyGrid {
            origin: self.origin,
            resolution: self.resolution,
            dims: self.dims,
            cells: self.cells.clone(),
            free_streak: self.free_streak.clone(),
            inflated: true,
            stamps: Vec::new(),
            epoch: 0,
        };
        let offsets = ball_offsets(delta, self.resolution);
        let d = self.dims.map(|n| n as i64);
        for (l, c) in self.cells.iter().enumerate() {
            if *c != Cell::Occupied {
                continue;
            }
            let [i, j, k] = self.unlinear(l).map(|x| x as i64);
            for o in &offsets {
                let (a, b, c) = (i + o[0], j + o[1], k + o[2]);
                if a >= 0 && b >= 0 && c >= 0 && a < d[0] && b < d[1] && c < d[2] {
                    let nl = ((a * d[1] + b) * d[2] + c) as usize;
                    out.cells[nl] = Cell::Occupied;
                }
            }
        }
        Ok(out)
    }

    /// Mark every cell whose center is outside `bounds` as occupied.
    pub fn block_outside(&mut self, bounds: &Aabb) {
        let inside: Vec<Vec<bool>> = (0..3)
            .map(|a| {
                (0..self.dims[a])
                    .map(|i| {
                        let c = self.origin.component(a) + (i as f64 + 0.5) * self.resolution;
                        c >= bounds.min.component(a) && c <= bounds.max.component(a)
                    })
                    .collect()
            })
            .collect();
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                let base = (i * self.dims[1] + j) * self.dims[2];
                let row_in = inside[0][i] && inside[1][j];
                for k in 0..self.dims[2] {
                    if !(row_in && inside[2][k]) {
                        self.cells[base + k] = Cell::Occupied;
                    }
                }
            }
        }
    }

    /// Occupied cells whose centers lie within `radius` of `p`, in
    /// lexicographic index order.
    pub fn occupied_within(&self, p: Vec3, radius: f64) -> Vec<VoxelIndex> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let lo = self.lattice(p - Vec3::new(radius, radius, radius));
        let hi = self.lattice(p + Vec3::new(radius, radius, radius));
        let clamp = |v: i64, a: usize| v.clamp(0, self.dims[a] as i64 - 1) as usize;
        if (0..3).any(|a| hi[a] < 0 || lo[a] >= self.dims[a] as i64) {
            return out;
        }
        for i in clamp(lo[0], 0)..=clamp(hi[0], 0) {
            for j in clamp(lo[1], 1)..=clamp(hi[1], 1) {
                let base = (i * self.dims[1] + j) * self.dims[2];
                for k in clamp(lo[2], 2)..=clamp(hi[2], 2) {
                    if self.cells[base + k] == Cell::Occupied
                        && self.center_of([i, j, k]).distance_squared(p) <= r2
                    {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }

    /// Plain-text voxel list `x y z state` for known cells.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for l in 0..self.cells.len() {
            let c = self.cells[l];
            if c == Cell::Unknown {
                continue;
            }
            let p = self.center_of(self.unlinear(l));
            let _ = writeln!(out, "{} {} {} {}", p.x, p.y, p.z, c.as_str());
        }
        out
    }
}

/// Center of the occupied cell nearest to `p` within `max_radius`; exact
/// distance ties go to the lexicographically smaller index.
pub fn nearest_occupied(grid: &OccupancyGrid, p: Vec3, max_radius: f64) -> Option<Vec3> {
    let mut best: Option<(f64, Vec3)> = None;
    for idx in grid.occupied_within(p, max_radius) {
        let c = grid.center_of(idx);
        let d = c.distance_squared(p);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| c)
}

fn snapped_origin(center: Vec3, res: f64, dims: [usize; 3]) -> Vec3 {
    let snap = |c: f64, n: usize| ((c / res).floor() - (n / 2) as f64) * res;
    Vec3::new(snap(center.x, dims[0]), snap(center.y, dims[1]), snap(center.z, dims[2]))
}

/// Integer offsets whose scaled length is within `delta`.
pub fn ball_offsets(delta: f64, res: f64) -> Vec<[i64; 3]> {
    let r = (delta / res + 1e-9).floor() as i64;
    let lim = delta * delta + 1e-9;
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                if ((a * a + b * b + c * c) as f64) * res * res <= lim {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// Walk lattice cells crossed by the segment `p0`-`p1` in order, starting
/// with the cell containing `p0` and ending with the cell containing `p1`.
pub fn traverse(origin: Vec3, res: f64, p0: Vec3, p1: Vec3, visit: &mut impl FnMut([i64; 3])) {
    let to_grid = |p: Vec3| (p - origin) / res;
    let a = to_grid(p0);
    let b = to_grid(p1);
    let mut cell = [a.x.floor() as i64, a.y.floor() as i64, a.z.floor() as i64];
    let end = [b.x.floor() as i64, b.y.floor() as i64, b.z.floor() as i64];
    let d = b - a;
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        let da = d.component(ax);
        let pa = a.component(ax);
        if da > 0.0 {
            step[ax] = 1;
            t_delta[ax] = 1.0 / da;
            t_max[ax] = ((cell[ax] + 1) as f64 - pa) / da;
        } else if da < 0.0 {
            step[ax] = -1;
            t_delta[ax] = -1.0 / da;
            t_max[ax] = (pa - cell[ax] as f64) / -da;
        }
    }
    let budget: i64 = (0..3).map(|ax| (end[ax] - cell[ax]).abs()).sum();
    visit(cell);
    for _ in 0..budget {
        if cell == end {
            break;
        }
        let ax = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        cell[ax] += step[ax];
        t_max[ax] += t_delta[ax];
        visit(cell);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{CameraIntrinsics, CameraPose};

    fn single_ray_image(origin: Vec3, depth: f64) -> DepthImage {
        let k = CameraIntrinsics::with_square_pixels(1, 1, 0.1, 10.0);
        DepthImage { intrinsics: k, pose: CameraPose::new(origin, 0.0), depths: vec![depth] }
    }

    fn window() -> OccupancyGrid {
        OccupancyGrid::centered(Vec3::new(0.0, 0.0, 5.0), &GridConfig::default())
    }

    #[test]
    fn single_ray_carves_and_marks_hit() {
        let mut g = window();
        g.integrate_depth(&single_ray_image(Vec3::new(0.0, 0.0, 5.0), 5.0));
        let hit = g.index_of(Vec3::new(5.0, 0.0, 5.0)).unwrap();
        assert_eq!(g.get(hit), Cell::Occupied);
        assert_eq!(g.count(Cell::Occupied), 1);
        for x in 0..20 {
            let p = Vec3::new(x as f64 * 0.25 + 0.1, 0.01, 5.0);
            assert_eq!(g.cell_at(p), Some(Cell::Free), "x={}", p.x);
        }
        assert_eq!(g.cell_at(Vec3::new(6.0, 0.0, 5.0)), Some(Cell::Unknown));
    }

    #[test]
    fn no_return_adds_no_occupancy() {
        let mut g = window();
        g.integrate_depth(&single_ray_image(Vec3::new(0.0, 0.0, 5.0), DepthImage::NO_RETURN));
        assert_eq!(g.count(Cell::Occupied), 0);
        assert_eq!(g.cell_at(Vec3::new(9.9, 0.0, 5.0)), Some(Cell::Free));
    }

    #[test]
    fn occupied_clears_after_two_free_observations() {
        let mut g = window();
        let p = Vec3::new(0.0, 0.0, 5.0);
        g.integrate_depth(&single_ray_image(p, 3.0));
        let idx = g.index_of(Vec3::new(3.0, 0.0, 5.0)).unwrap();
        assert!(g.is_occupied(idx));
        g.integrate_depth(&single_ray_image(p, 6.0));
        assert!(g.is_occupied(idx));
        g.integrate_depth(&single_ray_image(p, 6.0));
        assert_eq!(g.get(idx), Cell::Free);
    }

    #[test]
    fn inflate_identity_and_errors() {
        let mut g = window();
        g.set([10, 10, 10], Cell::Occupied);
        let same = g.inflate(0.0).unwrap();
        assert_eq!(same.count(Cell::Occupied), 1);
        assert_eq!(same.inflate(0.5), Err(MappingError::AlreadyInflated));
        let empty = window().inflate(0.7).unwrap();
        assert_eq!(empty.count(Cell::Occupied), 0);
    }

    #[test]
    fn inflate_ball_matches_brute_force() {
        let mut g = OccupancyGrid::new(Vec3::ZERO, 0.25, [24, 24, 24]);
        g.set([10, 10, 10], Cell::Occupied);
        let inf = g.inflate(0.5).unwrap();
        let c = g.center_of([10, 10, 10]);
        let mut expected = 0;
        for l in 0..g.len() {
            let idx = g.unlinear(l);
            let within = g.center_of(idx).distance(c) <= 0.5 + 1e-9;
            expected += within as usize;
            assert_eq!(inf.is_occupied(idx), within, "{idx:?}");
        }
        assert_eq!(expected, 33);
        // 5 voxels across along each axis
        assert!(inf.is_occupied([8, 10, 10]) && inf.is_occupied([12, 10, 10]));
        assert!(!inf.is_occupied([13, 10, 10]));
    }

    #[test]
    fn recenter_keeps_world_positions() {
        let mut g = window();
        let p = Vec3::new(3.1, -2.2, 5.3);
        let idx = g.index_of(p).unwrap();
        g.set(idx, Cell::Occupied);
        g.recenter(Vec3::new(2.0, 1.0, 5.0));
        assert_eq!(g.cell_at(p), Some(Cell::Occupied));
        assert_eq!(g.count(Cell::Occupied), 1);
        g.recenter(Vec3::new(30.0, 0.0, 5.0));
        assert_eq!(g.count(Cell::Occupied), 0);
    }

    #[test]
    fn traverse_visits_connected_cells() {
        let mut cells = Vec::new();
        traverse(Vec3::ZERO, 1.0, Vec3::new(0.5, 0.5, 0.5), Vec3::new(3.5, 2.5, 0.5), &mut |c| cells.push(c));
        assert_eq!(cells.first(), Some(&[0, 0, 0]));
        assert_eq!(cells.last(), Some(&[3, 2, 0]));
        for w in cells.windows(2) {
            let d: i64 = (0..3).map(|a| (w[1][a] - w[0][a]).abs()).sum();
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn occupied_within_is_lexicographic() {
        let mut g = OccupancyGrid::new(Vec3::ZERO, 1.0, [8, 8, 8]);
        g.set([5, 1, 1], Cell::Occupied);
        g.set([1, 5, 1], Cell::Occupied);
        g.set([7, 7, 7], Cell::Occupied);
        let found = g.occupied_within(Vec3::new(3.5, 3.5, 1.5), 3.0);
        assert_eq!(found, vec![[1, 5, 1], [5, 1, 1]]);
    }

    #[test]
    fn nearest_occupied_cases() {
        let mut g = window();
        assert_eq!(nearest_occupied(&g, Vec3::new(0.0, 0.0, 5.0), 8.0), None);
        let idx = g.index_of(Vec3::new(5.0, 0.0, 5.0)).unwrap();
        g.set(idx, Cell::Occupied);
        let c = g.center_of(idx);
        assert_eq!(nearest_occupied(&g, Vec3::new(0.0, 0.0, 5.0), 8.0), Some(c));
        assert_eq!(nearest_occupied(&g, Vec3::new(0.0, 0.0, 5.0), 2.0), None);
    }

    #[test]
    fn nearest_occupied_tie_goes_to_smaller_index() {
        let mut g = OccupancyGrid::new(Vec3::ZERO, 1.0, [9, 9, 9]);
        g.set([6, 4, 4], Cell::Occupied);
        g.set([2, 4, 4], Cell::Occupied);
        g.set([4, 2, 4], Cell::Occupied);
        let p = g.center_of([4, 4, 4]);
        // oracle: exhaustive scan in index order with strict improvement
        let mut best: Option<(f64, VoxelIndex)> = None;
        for l in 0..g.len() {
            let idx = g.unlinear(l);
            if g.is_occupied(idx) {
                let d = g.center_of(idx).distance_squared(p);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, idx));
                }
            }
        }
        assert_eq!(best.unwrap().1, [2, 4, 4]);
        assert_eq!(nearest_occupied(&g, p, 5.0), Some(g.center_of([2, 4, 4])));
    }

    #[test]
    fn dump_lists_known_cells() {
        let mut g = OccupancyGrid::new(Vec3::ZERO, 1.0, [2, 1, 1]);
        g.set([1, 0, 0], Cell::Occupied);
        assert_eq!(g.dump_text(), "1.5 0.5 0.5 occupied\n");
    }

    /// Straightforward carving through the generic lattice walk.
    fn reference_integrate(g: &mut OccupancyGrid, img: &DepthImage) {
        let k = img.intrinsics;
        let o = img.pose.position;
        let mut hits = std::collections::HashSet::new();
        let mut ends = Vec::new();
        for v in 0..k.height {
            for u in 0..k.width {
                match img.hit_point(u, v) {
                    Some(h) => {
                        if let Some(idx) = g.index_of(h) {
                            hits.insert(idx);
                            g.set(idx, Cell::Occupied);
                            let l = g.linear(idx);
                            g.free_streak[l] = 0;
                        }
                        ends.push((h, true));
                    }
                    None => ends.push((o + img.ray_dir(u, v) * k.max_range, false)),
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (end, is_hit) in ends {
            let last = g.lattice(end);
            let mut cells = Vec::new();
            traverse(g.origin, g.resolution, o, end, &mut |lat| cells.push(lat));
            for lat in cells {
                if is_hit && lat == last {
                    continue;
                }
                let Some(idx) = g.checked(lat) else { continue };
                if hits.contains(&idx) || !seen.insert(idx) {
                    continue;
                }
                let l = g.linear(idx);
                if g.cells[l] == Cell::Occupied {
                    g.free_streak[l] += 1;
                    if g.free_streak[l] >= CLEAR_AFTER {
                        g.cells[l] = Cell::Free;
                        g.free_streak[l] = 0;
                    }
                } else {
                    g.cells[l] = Cell::Free;
                }
            }
        }
    }

    #[test]
    fn integration_matches_reference_carving() {
        use crate::world::{generate_scenario, render_depth, ScenarioConfig};
        let sc = generate_scenario(&ScenarioConfig::forest(3, 5)).unwrap();
        let k = CameraIntrinsics::default();
        let mut fast = OccupancyGrid::centered(Vec3::new(12.0, 0.0, 5.0), &GridConfig::default());
        let mut slow = fast.clone();
        for (n, yaw) in [0.0, 0.7, -0.4, 3.0].into_iter().enumerate() {
            let pose = CameraPose::new(Vec3::new(10.0 + n as f64, 0.5 * n as f64, 4.0 + 0.3 * n as f64), yaw);
            let img = render_depth(&pose, &k, &sc.obstacles);
            fast.integrate_depth(&img);
            reference_integrate(&mut slow, &img);
            assert_eq!(fast.cells, slow.cells, "image {n}");
            assert_eq!(fast.free_streak, slow.free_streak);
        }
        // a camera outside the window goes through the generic walk
        let pose = CameraPose::new(Vec3::new(-1.0, 0.0, 5.0), 0.0);
        let img = render_depth(&pose, &k, &sc.obstacles);
        fast.integrate_depth(&img);
        reference_integrate(&mut slow, &img);
        assert_eq!(fast.cells, slow.cells);
    }
}
