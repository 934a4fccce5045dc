//! World definition, scenario generation, synthetic depth rendering and
//! ground-truth visibility.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{closest_hit, nearest_point_on_primitive, Aabb, Primitive, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("could not place {placed} of {wanted} agents without overlap after {attempts} attempts")]
    Overcrowded { placed: usize, wanted: usize, attempts: usize },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub primitives: Vec<Primitive>,
    pub world_bounds: Aabb,
}

impl ObstacleSet {
    pub fn new(primitives: Vec<Primitive>, world_bounds: Aabb) -> Self {
        Self { primitives, world_bounds }
    }

    pub fn empty(world_bounds: Aabb) -> Self {
        Self::new(Vec::new(), world_bounds)
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Distance to the closest solid (0 inside one); infinity when empty.
    pub fn min_distance(&self, p: Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|q| q.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Closest surface point over all primitives, first primitive winning ties.
    pub fn nearest_surface_point(&self, p: Vec3) -> Option<Vec3> {
        let mut best: Option<(f64, Vec3)> = None;
        for prim in &self.primitives {
            let q = nearest_point_on_primitive(prim, p);
            let d = q.distance_squared(p);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, q));
            }
        }
        best.map(|(_, q)| q)
    }

    /// Primitives whose solid comes within `radius` of `p`.
    pub fn near(&self, p: Vec3, radius: f64) -> impl Iterator<Item = &Primitive> + '_ {
        self.primitives.iter().filter(move |q| q.distance(p) <= radius)
    }

    /// Parses the output of [`ObstacleSet::to_text`].
    pub fn from_text(text: &str) -> Result<Self, ScenarioError> {
        let mut bounds = None;
        let mut prims = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tag) = parts.next() else { continue };
            let nums: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let bad = || ScenarioError::Invalid(format!("obstacle line {}: {line:?}", n + 1));
            let v = nums.map_err(|_| bad())?;
            let p3 = |i: usize| Vec3::new(v[i], v[i + 1], v[i + 2]);
            match (tag, v.len()) {
                ("bounds", 6) => bounds = Some(Aabb::new(p3(0), p3(3))),
                ("box", 6) => prims.push(Primitive::Box(Aabb::new(p3(0), p3(3)))),
                ("cylinder", 5) => prims.push(Primitive::cylinder(v[0], v[1], v[2], v[3], v[4])),
                ("sphere", 4) => prims.push(Primitive::sphere(p3(0), v[3])),
                _ => return Err(bad()),
            }
        }
        let bounds = bounds.ok_or_else(|| ScenarioError::Invalid("obstacle text has no bounds line".into()))?;
        Ok(Self::new(prims, bounds))
    }

    /// Plain-text primitive list, one per line, for plotting tools.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let b = self.world_bounds;
        let _ = writeln!(
            out,
            "bounds {} {} {} {} {} {}",
            b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
        );
        for prim in &self.primitives {
            let _ = match *prim {
                Primitive::Box(a) => writeln!(
                    out,
                    "box {} {} {} {} {} {}",
                    a.min.x, a.min.y, a.min.z, a.max.x, a.max.y, a.max.z
                ),
                Primitive::Cylinder { center_x, center_y, radius, z_min, z_max } => {
                    writeln!(out, "cylinder {center_x} {center_y} {radius} {z_min} {z_max}")
                }
                Primitive::Sphere { center, radius } => {
                    writeln!(out, "sphere {} {} {} {}", center.x, center.y, center.z, radius)
                }
            };
        }
        out
    }
}

/// Kind-specific scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// One box with the given horizontal footprint spanning the world height.
    SingleSlab {
        /// Footprint extent along y (across the direction of travel).
        length: f64,
        /// Footprint extent along x.
        thickness: f64,
        center_x: f64,
        center_y: f64,
    },
    /// Jittered lattice of full-height square boxes.
    RandomField {
        /// Horizontal diagonal of each box footprint.
        diagonal: f64,
        /// Nominal center-to-center spacing.
        spacing: f64,
        /// Spacing varies by at most this much.
        jitter: f64,
        /// Probability that a lattice site is left empty.
        dropout: f64,
        /// Horizontal extent of the field; z is ignored.
        field: Aabb,
    },
    /// Trunks (vertical cylinders) with sphere-cluster crowns.
    Forest {
        /// Target fraction of `area` covered by horizontal footprints.
        coverage: f64,
        area: Aabb,
        trunk_radius_min: f64,
        trunk_radius_max: f64,
        /// Minimum surface-to-surface trunk gap.
        gap_min: f64,
        crown_radius_min: f64,
        crown_radius_max: f64,
        crown_z_min: f64,
        crown_z_max: f64,
    },
    Custom { primitives: Vec<Primitive> },
}

/// Scenario description. `seed` fixes the obstacle layout, `run` varies the
/// start and goal placement between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    #[serde(default)]
    pub run: u64,
    /// When set, the obstacle layout is regenerated for every run.
    #[serde(default)]
    pub reseed_layout_per_run: bool,
    pub agent_count: usize,
    pub start_region: Aabb,
    pub goal: Vec3,
    /// Start region and goal are shifted along y by independent uniform
    /// offsets in `[-endpoint_jitter, endpoint_jitter]`.
    #[serde(default)]
    pub endpoint_jitter: f64,
    pub min_agent_spacing: f64,
    /// Minimum clearance between starting agents and any obstacle.
    pub start_clearance: f64,
    pub world_bounds: Aabb,
}

const WORLD_HEIGHT: f64 = 10.0;

fn flight_world(x0: f64, x1: f64, half_width: f64, height: f64) -> Aabb {
    Aabb::new(Vec3::new(x0, -half_width, 0.0), Vec3::new(x1, half_width, height))
}

fn start_box(x: f64, half: f64) -> Aabb {
    Aabb::new(Vec3::new(x - half, -half, 4.0), Vec3::new(x + half, half, 6.0))
}

impl ScenarioConfig {
    pub fn empty(agent_count: usize) -> Self {
        Self {
            kind: ScenarioKind::Custom { primitives: Vec::new() },
            seed: 0,
            run: 0,
            reseed_layout_per_run: false,
            agent_count,
            start_region: start_box(-12.0, 4.0),
            goal: Vec3::new(20.0, 0.0, 5.0),
            endpoint_jitter: 0.0,
            min_agent_spacing: 1.5,
            start_clearance: 1.0,
            world_bounds: flight_world(-30.0, 40.0, 30.0, WORLD_HEIGHT),
        }
    }

    /// A 5 m x 0.5 m full-height slab between the flock and the goal.
    pub fn single_slab(agent_count: usize) -> Self {
        Self {
            kind: ScenarioKind::SingleSlab { length: 5.0, thickness: 0.5, center_x: 0.0, center_y: 0.0 },
            endpoint_jitter: 1.5,
            start_region: start_box(-12.0, 3.5),
            goal: Vec3::new(14.0, 0.0, 5.0),
            ..Self::empty(agent_count)
        }
    }

    /// Field of 2 m-diagonal boxes roughly 4 m apart.
    pub fn random_field(agent_count: usize) -> Self {
        Self {
            kind: ScenarioKind::RandomField {
                diagonal: 2.0,
                spacing: 4.0,
                jitter: 0.5,
                dropout: 0.25,
                field: Aabb::new(Vec3::new(-6.0, -15.0, 0.0), Vec3::new(6.0, 15.0, WORLD_HEIGHT)),
            },
            reseed_layout_per_run: true,
            endpoint_jitter: 3.0,
            start_region: start_box(-16.0, 3.5),
            goal: Vec3::new(18.0, 0.0, 5.0),
            ..Self::empty(agent_count)
        }
    }

    /// Single box of the given horizontal diagonal, used for the avoidance
    /// ablation.
    pub fn ablation_block(agent_count: usize, diagonal: f64) -> Self {
        let side = diagonal / std::f64::consts::SQRT_2;
        Self {
            kind: ScenarioKind::SingleSlab { length: side, thickness: side, center_x: 0.0, center_y: 0.0 },
            endpoint_jitter: 0.5,
            start_region: start_box(-10.0, 2.5),
            goal: Vec3::new(12.0, 0.0, 5.0),
            min_agent_spacing: 1.0,
            ..Self::empty(agent_count)
        }
    }

    /// 30 m x 40 m forest with 25% canopy coverage. Travel is along +x.
    pub fn forest(agent_count: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Forest {
                coverage: 0.25,
                area: Aabb::new(Vec3::new(0.0, -15.0, 0.0), Vec3::new(40.0, 15.0, 14.0)),
                trunk_radius_min: 0.2,
                trunk_radius_max: 0.5,
                gap_min: 2.5,
                crown_radius_min: 0.8,
                crown_radius_max: 1.6,
                crown_z_min: 6.5,
                crown_z_max: 11.0,
            },
            seed,
            endpoint_jitter: 6.0,
            start_region: start_box(-6.0, 3.5),
            goal: Vec3::new(46.0, 0.0, 5.0),
            world_bounds: flight_world(-14.0, 56.0, 24.0, 14.0),
            ..Self::empty(agent_count)
        }
    }

    pub fn for_run(&self, run: u64) -> Self {
        Self { run, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if self.agent_count == 0 {
            return bad("agent_count must be at least 1");
        }
        if !self.start_region.is_valid() || !self.world_bounds.is_valid() {
            return bad("malformed region");
        }
        if !self.goal.is_finite() || self.min_agent_spacing < 0.0 || self.endpoint_jitter < 0.0 {
            return bad("goal, spacing and jitter must be finite and non-negative");
        }
        match &self.kind {
            ScenarioKind::SingleSlab { length, thickness, .. } if *length <= 0.0 || *thickness <= 0.0 => {
                bad("slab dimensions must be positive")
            }
            ScenarioKind::RandomField { diagonal, spacing, jitter, dropout, .. }
                if *diagonal <= 0.0 || *spacing <= 0.0 || *jitter < 0.0 || !(0.0..1.0).contains(dropout) =>
            {
                bad("random field parameters out of range")
            }
            ScenarioKind::Forest { coverage, trunk_radius_min, trunk_radius_max, crown_radius_min, crown_radius_max, .. }
                if !(0.0..1.0).contains(coverage)
                    || *trunk_radius_min <= 0.0
                    || trunk_radius_min > trunk_radius_max
                    || *crown_radius_min <= 0.0
                    || crown_radius_min > crown_radius_max =>
            {
                bad("forest parameters out of range")
            }
            ScenarioKind::Custom { primitives } if primitives.iter().any(|p| !p.is_valid()) => {
                bad("custom primitive is malformed")
            }
            _ => Ok(()),
        }
    }
}

/// Generated world with initial agent positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub obstacles: ObstacleSet,
    pub starts: Vec<Vec3>,
    pub goal: Vec3,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    let layout_seed = if cfg.reseed_layout_per_run { mix(cfg.seed, cfg.run) } else { cfg.seed };
    let mut layout_rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let mut endpoint_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0xA5A5_A5A5, cfg.run));

    let bounds = cfg.world_bounds;
    let jitter = cfg.endpoint_jitter;
    let draw = |rng: &mut ChaCha8Rng| if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
    let start_shift = Vec3::new(0.0, draw(&mut endpoint_rng), 0.0);
    let goal_shift = Vec3::new(0.0, draw(&mut endpoint_rng), 0.0);
    let start_region = Aabb::new(cfg.start_region.min + start_shift, cfg.start_region.max + start_shift);
    let goal = cfg.goal + goal_shift;

    // keep obstacles away from where the flock starts and ends
    let keep_out = [start_region.expanded(cfg.start_clearance), Aabb::from_center(goal, Vec3::new(2.0, 2.0, 20.0))];

    let primitives = match &cfg.kind {
        ScenarioKind::SingleSlab { length, thickness, center_x, center_y } => {
            let half = Vec3::new(thickness / 2.0, length / 2.0, 0.0);
            let c = Vec3::new(*center_x, *center_y, 0.0);
            vec![Primitive::Box(Aabb::new(
                Vec3::new(c.x - half.x, c.y - half.y, bounds.min.z),
                Vec3::new(c.x + half.x, c.y + half.y, bounds.max.z),
            ))]
        }
        ScenarioKind::RandomField { diagonal, spacing, jitter, dropout, field } => {
            random_field(&mut layout_rng, *diagonal, *spacing, *jitter, *dropout, field, &bounds, &keep_out)
        }
        ScenarioKind::Forest { .. } => forest(&mut layout_rng, &cfg.kind, &bounds, &keep_out),
        ScenarioKind::Custom { primitives } => primitives.clone(),
    };
    let obstacles = ObstacleSet::new(
        primitives.into_iter().filter(|p| p.bounds().intersects(&bounds)).collect(),
        bounds,
    );
    let starts = place_agents(&mut endpoint_rng, cfg, &start_region, &obstacles)?;
    Ok(Scenario { obstacles, starts, goal })
}

#[allow(clippy::too_many_arguments)]
fn random_field(
    rng: &mut ChaCha8Rng,
    diagonal: f64,
    spacing: f64,
    jitter: f64,
    dropout: f64,
    field: &Aabb,
    bounds: &Aabb,
    keep_out: &[Aabb],
) -> Vec<Primitive> {
    let half_side = diagonal / (2.0 * std::f64::consts::SQRT_2);
    let nx = ((field.max.x - field.min.x) / spacing).floor() as usize + 1;
    let ny = ((field.max.y - field.min.y) / spacing).floor() as usize + 1;
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            // draw both offsets before the dropout test so layouts stay
            // aligned across dropout settings
            let ox = rng.gen_range(-jitter / 2.0..=jitter / 2.0);
            let oy = rng.gen_range(-jitter / 2.0..=jitter / 2.0);
            let keep = rng.gen::<f64>() >= dropout;
            if !keep {
                continue;
            }
            let cx = field.min.x + i as f64 * spacing + ox;
            let cy = field.min.y + j as f64 * spacing + oy;
            let b = Aabb::new(
                Vec3::new(cx - half_side, cy - half_side, bounds.min.z),
                Vec3::new(cx + half_side, cy + half_side, bounds.max.z),
            );
            if keep_out.iter().any(|k| k.intersects(&b)) {
                continue;
            }
            out.push(Primitive::Box(b));
        }
    }
    out
}

/// Horizontal coverage raster used while growing a forest.
pub struct CoverageRaster {
    origin_x: f64,
    origin_y: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    covered: Vec<bool>,
    count: usize,
}

impl CoverageRaster {
    pub fn new(area: &Aabb, cell: f64) -> Self {
        let nx = ((area.max.x - area.min.x) / cell).round().max(1.0) as usize;
        let ny = ((area.max.y - area.min.y) / cell).round().max(1.0) as usize;
        Self { origin_x: area.min.x, origin_y: area.min.y, cell, nx, ny, covered: vec![false; nx * ny], count: 0 }
    }

    pub fn add_disk(&mut self, cx: f64, cy: f64, r: f64) {
        let i0 = (((cx - r - self.origin_x) / self.cell).floor().max(0.0)) as usize;
        let j0 = (((cy - r - self.origin_y) / self.cell).floor().max(0.0)) as usize;
        let i1 = (((cx + r - self.origin_x) / self.cell).ceil().max(0.0) as usize).min(self.nx);
        let j1 = (((cy + r - self.origin_y) / self.cell).ceil().max(0.0) as usize).min(self.ny);
        for i in i0..i1 {
            let x = self.origin_x + (i as f64 + 0.5) * self.cell;
            for j in j0..j1 {
                let y = self.origin_y + (j as f64 + 0.5) * self.cell;
                if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                    let k = i * self.ny + j;
                    if !self.covered[k] {
                        self.covered[k] = true;
                        self.count += 1;
                    }
                }
            }
        }
    }

    pub fn add_primitive(&mut self, p: &Primitive) {
        match *p {
            Primitive::Cylinder { center_x, center_y, radius, .. } => self.add_disk(center_x, center_y, radius),
            Primitive::Sphere { center, radius } => self.add_disk(center.x, center.y, radius),
            Primitive::Box(b) => {
                for i in 0..self.nx {
                    let x = self.origin_x + (i as f64 + 0.5) * self.cell;
                    for j in 0..self.ny {
                        let y = self.origin_y + (j as f64 + 0.5) * self.cell;
                        let k = i * self.ny + j;
                        if x >= b.min.x && x <= b.max.x && y >= b.min.y && y <= b.max.y && !self.covered[k] {
                            self.covered[k] = true;
                            self.count += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn fraction(&self) -> f64 {
        self.count as f64 / self.covered.len() as f64
    }
}

/// Fraction of `area` covered by the horizontal footprint of `prims`.
pub fn canopy_coverage(prims: &[Primitive], area: &Aabb, cell: f64) -> f64 {
    let mut r = CoverageRaster::new(area, cell);
    for p in prims {
        r.add_primitive(p);
    }
    r.fraction()
}

fn forest(rng: &mut ChaCha8Rng, kind: &ScenarioKind, bounds: &Aabb, keep_out: &[Aabb]) -> Vec<Primitive> {
    let ScenarioKind::Forest {
        coverage,
        area,
        trunk_radius_min,
        trunk_radius_max,
        gap_min,
        crown_radius_min,
        crown_radius_max,
        crown_z_min,
        crown_z_max,
    } = *kind
    else {
        unreachable!("forest layout requested for another kind");
    };
    let mut raster = CoverageRaster::new(&area, 0.1);
    let mut trunks: Vec<(f64, f64, f64)> = Vec::new();
    let mut out = Vec::new();
    let mut failures = 0;
    while raster.fraction() < coverage && failures < 20_000 {
        let r = rng.gen_range(trunk_radius_min..=trunk_radius_max);
        let x = rng.gen_range(area.min.x + r..=area.max.x - r);
        let y = rng.gen_range(area.min.y + r..=area.max.y - r);
        let crown_r = rng.gen_range(crown_radius_min..=crown_radius_max);
        let crown_z = rng.gen_range(crown_z_min..=crown_z_max);
        let lobes = rng.gen_range(1..=3usize);
        let crowded = trunks
            .iter()
            .any(|&(tx, ty, tr)| ((tx - x).powi(2) + (ty - y).powi(2)).sqrt() - tr - r < gap_min);
        let footprint = Aabb::new(
            Vec3::new(x - crown_r - 1.0, y - crown_r - 1.0, bounds.min.z),
            Vec3::new(x + crown_r + 1.0, y + crown_r + 1.0, bounds.max.z),
        );
        if crowded || keep_out.iter().any(|k| k.intersects(&footprint)) {
            failures += 1;
            continue;
        }
        trunks.push((x, y, r));
        let trunk = Primitive::cylinder(x, y, r, bounds.min.z, crown_z);
        raster.add_primitive(&trunk);
        out.push(trunk);
        for k in 0..lobes {
            let (ox, oy, oz, rr) = if k == 0 {
                (0.0, 0.0, 0.0, crown_r)
            } else {
                (
                    rng.gen_range(-0.6..=0.6) * crown_r,
                    rng.gen_range(-0.6..=0.6) * crown_r,
                    rng.gen_range(-0.4..=0.4) * crown_r,
                    crown_r * rng.gen_range(0.6..=0.9),
                )
            };
            let s = Primitive::sphere(Vec3::new(x + ox, y + oy, crown_z + oz), rr);
            raster.add_primitive(&s);
            out.push(s);
        }
    }
    out
}

fn place_agents(
    rng: &mut ChaCha8Rng,
    cfg: &ScenarioConfig,
    region: &Aabb,
    obstacles: &ObstacleSet,
) -> Result<Vec<Vec3>, ScenarioError> {
    const ATTEMPTS: usize = 20_000;
    let mut starts: Vec<Vec3> = Vec::with_capacity(cfg.agent_count);
    let mut attempts = 0;
    while starts.len() < cfg.agent_count {
        if attempts >= ATTEMPTS {
            return Err(ScenarioError::Overcrowded { placed: starts.len(), wanted: cfg.agent_count, attempts });
        }
        attempts += 1;
        let mut coord = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let p = Vec3::new(
            coord(region.min.x, region.max.x),
            coord(region.min.y, region.max.y),
            coord(region.min.z, region.max.z),
        );
        if starts.iter().any(|q| q.distance(p) < cfg.min_agent_spacing) {
            continue;
        }
        if obstacles.min_distance(p) < cfg.start_clearance {
            continue;
        }
        starts.push(p);
    }
    Ok(starts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    /// Vertical field of view, radians.
    pub vfov: f64,
    pub max_range: f64,
}

impl CameraIntrinsics {
    /// Square-pixel camera with the given horizontal FOV.
    pub fn with_square_pixels(width: usize, height: usize, hfov: f64, max_range: f64) -> Self {
        let vfov = 2.0 * ((hfov / 2.0).tan() * height as f64 / width as f64).atan();
        Self { width, height, hfov, vfov, max_range }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.hfov > 0.0
            && self.hfov < std::f64::consts::PI
            && self.vfov > 0.0
            && self.vfov < std::f64::consts::PI
            && self.max_range > 0.0
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::with_square_pixels(64, 48, std::f64::consts::FRAC_PI_2, 10.0)
    }
}

/// Camera position and heading; the optical axis is horizontal rotated by
/// `yaw` about +z, then tilted by `pitch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraPose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw, pitch: 0.0 }
    }

    /// Orthonormal (forward, right, up) frame.
    pub fn frame(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Vec3::new(cp * cy, cp * sy, sp);
        let right = Vec3::new(sy, -cy, 0.0);
        let up = right.cross(forward);
        (forward, right, up)
    }
}

/// Range image; pixels with no return hold [`DepthImage::NO_RETURN`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub const NO_RETURN: f64 = f64::INFINITY;

    pub fn depth(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.intrinsics.width + u]
    }

    /// Unit ray through the center of pixel `(u, v)`; `u` grows to the
    /// right, `v` grows downward.
    pub fn ray_dir(&self, u: usize, v: usize) -> Vec3 {
        pixel_ray(&self.intrinsics, &self.pose, u, v)
    }

    /// World-space return for pixel `(u, v)`, if any.
    pub fn hit_point(&self, u: usize, v: usize) -> Option<Vec3> {
        let d = self.depth(u, v);
        d.is_finite().then(|| self.pose.position + self.ray_dir(u, v) * d)
    }
}

fn pixel_ray(k: &CameraIntrinsics, pose: &CameraPose, u: usize, v: usize) -> Vec3 {
    PixelRays::new(k, pose).ray(u, v)
}

/// Per-image constants for generating pixel rays.
struct PixelRays {
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tx: f64,
    ty: f64,
    w: f64,
    h: f64,
}

impl PixelRays {
    fn new(k: &CameraIntrinsics, pose: &CameraPose) -> Self {
        let (forward, right, up) = pose.frame();
        Self {
            forward,
            right,
            up,
            tx: (k.hfov / 2.0).tan(),
            ty: (k.vfov / 2.0).tan(),
            w: k.width as f64,
            h: k.height as f64,
        }
    }

    fn ray(&self, u: usize, v: usize) -> Vec3 {
        let sx = (2.0 * (u as f64 + 0.5) / self.w - 1.0) * self.tx;
        let sy = (1.0 - 2.0 * (v as f64 + 0.5) / self.h) * self.ty;
        (self.forward + self.right * sx + self.up * sy).normalize_or_zero()
    }

    /// Conservative frustum test on a bounding sphere.
    fn may_see(&self, origin: Vec3, center: Vec3, radius: f64) -> bool {
        let d = center - origin;
        if d.norm() <= radius {
            return true;
        }
        let f = d.dot(self.forward);
        if f < -radius {
            return false;
        }
        // side planes through the origin, normals pointing out of the frustum
        let planes = [
            self.right - self.forward * self.tx,
            -self.right - self.forward * self.tx,
            self.up - self.forward * self.ty,
            -self.up - self.forward * self.ty,
        ];
        planes.iter().all(|n| d.dot(*n) / n.norm() <= radius)
    }
}

/// Synthesize a range image. Agents are never rendered.
pub fn render_depth(pose: &CameraPose, intrinsics: &CameraIntrinsics, obstacles: &ObstacleSet) -> DepthImage {
    let rays = PixelRays::new(intrinsics, pose);
    let candidates: Vec<&Primitive> = obstacles
        .near(pose.position, intrinsics.max_range)
        .filter(|p| {
            let b = p.bounds();
            rays.may_see(pose.position, b.center(), b.size().norm() / 2.0)
        })
        .collect();
    let mut depths = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir = rays.ray(u, v);
            let d = closest_hit(pose.position, dir, intrinsics.max_range, candidates.iter().copied());
            depths.push(d.unwrap_or(DepthImage::NO_RETURN));
        }
    }
    DepthImage { intrinsics: *intrinsics, pose: *pose, depths }
}

/// True when the closed segment `a`-`b` touches no obstacle. Tangent contact
/// counts as blocked.
pub fn line_of_sight(a: Vec3, b: Vec3, obstacles: &ObstacleSet) -> bool {
    let len = a.distance(b);
    let Ok(dir) = (b - a).try_normalize() else {
        return !obstacles.primitives.iter().any(|p| p.contains(a));
    };
    !obstacles.primitives.iter().any(|p| match p.ray_interval(a, dir) {
        Some((t0, t1)) => t0 <= len && t1 >= 0.0,
        None => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::raycast;

    fn slab_world() -> ObstacleSet {
        ObstacleSet::new(
            vec![Primitive::Box(Aabb::new(Vec3::new(4.0, -1.0, 0.0), Vec3::new(5.0, 1.0, 10.0)))],
            flight_world(-20.0, 20.0, 20.0, 10.0),
        )
    }

    #[test]
    fn single_slab_scenario() {
        let mut cfg = ScenarioConfig::single_slab(9);
        cfg.seed = 7;
        let sc = generate_scenario(&cfg).unwrap();
        assert_eq!(sc.obstacles.primitives.len(), 1);
        let Primitive::Box(b) = sc.obstacles.primitives[0] else { panic!() };
        let s = b.size();
        assert!((s.y - 5.0).abs() < 1e-12 && (s.x - 0.5).abs() < 1e-12);
        assert_eq!(b.min.z, cfg.world_bounds.min.z);
        assert_eq!(b.max.z, cfg.world_bounds.max.z);
        assert_eq!(sc.starts.len(), 9);
    }

    #[test]
    fn agents_respect_spacing_and_clearance() {
        for run in 0..10 {
            let cfg = ScenarioConfig::random_field(9).for_run(run);
            let sc = generate_scenario(&cfg).unwrap();
            for (i, a) in sc.starts.iter().enumerate() {
                assert!(sc.obstacles.min_distance(*a) >= cfg.start_clearance);
                for b in &sc.starts[i + 1..] {
                    assert!(a.distance(*b) >= cfg.min_agent_spacing);
                }
            }
        }
    }

    #[test]
    fn single_agent_empty_world_keeps_goal() {
        let cfg = ScenarioConfig::empty(1);
        let sc = generate_scenario(&cfg).unwrap();
        assert_eq!(sc.starts.len(), 1);
        assert!(sc.obstacles.is_empty());
        assert_eq!(sc.goal, cfg.goal);
    }

    #[test]
    fn overcrowded_start_region_is_an_error() {
        let mut cfg = ScenarioConfig::empty(50);
        cfg.start_region = Aabb::new(Vec3::new(0.0, 0.0, 5.0), Vec3::new(1.0, 1.0, 5.0));
        assert!(matches!(generate_scenario(&cfg), Err(ScenarioError::Overcrowded { .. })));
    }

    #[test]
    fn random_field_spacing() {
        let sc = generate_scenario(&ScenarioConfig::random_field(9).for_run(3)).unwrap();
        let centers: Vec<Vec3> = sc.obstacles.primitives.iter().map(|p| p.bounds().center().horizontal()).collect();
        assert!(centers.len() > 20);
        for (i, c) in centers.iter().enumerate() {
            let Primitive::Box(b) = sc.obstacles.primitives[i] else { panic!() };
            let s = b.size();
            assert!((s.x.hypot(s.y) - 2.0).abs() < 1e-9);
            let nn = centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, d)| d.distance(*c))
                .fold(f64::INFINITY, f64::min);
            // dropout can leave an isolated box; only check lower bound there
            assert!(nn >= 2.5 - 1e-9, "nearest neighbour {nn}");
        }
    }

    #[test]
    fn forest_coverage_near_target() {
        for seed in [1, 2] {
            let cfg = ScenarioConfig::forest(9, seed);
            let sc = generate_scenario(&cfg).unwrap();
            let ScenarioKind::Forest { area, .. } = cfg.kind else { panic!() };
            let cov = canopy_coverage(&sc.obstacles.primitives, &area, 0.05);
            assert!((cov - 0.25).abs() <= 0.03, "coverage {cov}");
        }
    }

    #[test]
    fn scenario_is_seed_deterministic() {
        let cfg = ScenarioConfig::forest(9, 11).for_run(4);
        assert_eq!(generate_scenario(&cfg).unwrap(), generate_scenario(&cfg).unwrap());
        let other = generate_scenario(&cfg.for_run(5)).unwrap();
        assert_ne!(other.starts, generate_scenario(&cfg).unwrap().starts);
    }

    #[test]
    fn depth_center_pixel_hits_box_face() {
        let k = CameraIntrinsics::with_square_pixels(65, 49, std::f64::consts::FRAC_PI_2, 10.0);
        let img = render_depth(&CameraPose::new(Vec3::new(0.0, 0.0, 5.0), 0.0), &k, &slab_world());
        assert!((img.depth(32, 24) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn depth_of_empty_world_has_no_returns() {
        let k = CameraIntrinsics::default();
        let img = render_depth(&CameraPose::new(Vec3::new(0.0, 0.0, 5.0), 0.3), &k, &ObstacleSet::empty(slab_world().world_bounds));
        assert_eq!(img.depths.len(), 64 * 48);
        assert!(img.depths.iter().all(|d| *d == DepthImage::NO_RETURN));
    }

    #[test]
    fn depth_matches_per_pixel_raycast() {
        let k = CameraIntrinsics::with_square_pixels(33, 25, std::f64::consts::FRAC_PI_2, 12.0);
        let world = ObstacleSet::new(vec![Primitive::sphere(Vec3::new(10.0, 0.0, 5.0), 2.0)], slab_world().world_bounds);
        let pose = CameraPose::new(Vec3::new(0.0, 0.0, 5.0), 0.0);
        let img = render_depth(&pose, &k, &world);
        assert!((img.depth(16, 12) - 8.0).abs() < 1e-12);
        assert!(img.depth(17, 12) > 8.0 && img.depth(16, 11) > 8.0);
        for v in 0..k.height {
            for u in 0..k.width {
                let oracle = raycast(pose.position, img.ray_dir(u, v), k.max_range, &world.primitives).unwrap();
                let got = img.depth(u, v);
                match oracle {
                    Some(t) => assert!((got - t).abs() < 1e-9),
                    None => assert_eq!(got, DepthImage::NO_RETURN),
                }
            }
        }
    }

    #[test]
    fn camera_frame_is_right_handed() {
        let (f, r, u) = CameraPose::new(Vec3::ZERO, 0.0).frame();
        assert_eq!(f, Vec3::X);
        assert_eq!(r, -Vec3::Y);
        assert_eq!(u, Vec3::Z);
    }

    #[test]
    fn line_of_sight_cases() {
        let empty = ObstacleSet::empty(slab_world().world_bounds);
        let a = Vec3::new(0.0, 0.0, 5.0);
        let b = Vec3::new(10.0, 0.0, 5.0);
        assert!(line_of_sight(a, b, &empty));
        assert!(!line_of_sight(a, b, &slab_world()));
        let tree = ObstacleSet::new(vec![Primitive::cylinder(5.0, 1.0, 1.0, 0.0, 10.0)], empty.world_bounds);
        assert!(!line_of_sight(a, b, &tree));
        assert!(!line_of_sight(b, a, &tree));
        let clear = ObstacleSet::new(vec![Primitive::cylinder(5.0, 1.001, 1.0, 0.0, 10.0)], empty.world_bounds);
        assert!(line_of_sight(a, b, &clear));
    }

    #[test]
    fn obstacle_text_export() {
        let txt = slab_world().to_text();
        assert!(txt.lines().nth(1).unwrap().starts_with("box 4 -1 0 5 1 10"));
        let forest = generate_scenario(&ScenarioConfig::forest(3, 2)).unwrap().obstacles;
        assert_eq!(ObstacleSet::from_text(&forest.to_text()).unwrap(), forest);
        assert!(ObstacleSet::from_text("box 1 2 3").is_err());
    }

    #[test]
    fn culled_render_matches_brute_force_raycast() {
        let sc = generate_scenario(&ScenarioConfig::forest(3, 2)).unwrap();
        let k = CameraIntrinsics::default();
        for (n, yaw) in [0.0, 1.1, 2.5, -2.0, 3.1].into_iter().enumerate() {
            let pose = CameraPose::new(Vec3::new(5.0 + 7.0 * n as f64, -6.0 + 3.0 * n as f64, 4.0 + n as f64), yaw);
            let img = render_depth(&pose, &k, &sc.obstacles);
            for v in 0..k.height {
                for u in 0..k.width {
                    let want = raycast(pose.position, img.ray_dir(u, v), k.max_range, &sc.obstacles.primitives)
                        .unwrap()
                        .unwrap_or(DepthImage::NO_RETURN);
                    assert_eq!(img.depth(u, v), want, "pixel ({u}, {v}) yaw {yaw}");
                }
            }
        }
    }
}
