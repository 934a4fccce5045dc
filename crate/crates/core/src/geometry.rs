//! Vector and primitive geometry: nearest-point queries and ray intersection.
//!
//! Everything here is double precision and pure. Surface membership is
//! decided with [`SURFACE_TOL`].

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for deciding that a point lies on a surface, in meters.
pub const SURFACE_TOL: f64 = 1e-6;

/// Allowed deviation of a direction's norm from 1.
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    #[error("direction is not unit length")]
    NonUnitDirection,
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn distance_squared(self, o: Vec3) -> f64 {
        (self - o).norm_squared()
    }

    /// Unit vector in the same direction. Zero vectors are an error.
    pub fn try_normalize(self) -> Result<Vec3, GeometryError> {
        let n = self.norm();
        if !n.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if n == 0.0 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(self / n)
    }

    /// Unit vector, or zero for the zero vector. Use where a vanishing
    /// direction legitimately contributes nothing.
    pub fn normalize_or_zero(self) -> Vec3 {
        self.try_normalize().unwrap_or(Vec3::ZERO)
    }

    /// Rescale so the norm does not exceed `max_norm`, keeping direction.
    pub fn clamp_norm(self, max_norm: f64) -> Vec3 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self * (max_norm / n)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with_component(mut self, axis: usize, v: f64) -> Vec3 {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }

    pub fn min_by_component(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_by_component(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Horizontal (xy) part with z zeroed.
    pub fn horizontal(self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl std::iter::Sum for Vec3 {
    fn sum<I: Iterator<Item = Vec3>>(iter: I) -> Vec3 {
        iter.fold(Vec3::ZERO, |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec3,
    pub b: Vec3,
}

impl Segment {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.a + (self.b - self.a) * t
    }

    /// Parameter in `[0, 1]` of the point nearest to `p`.
    pub fn closest_parameter(&self, p: Vec3) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            return 0.0;
        }
        ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0)
    }

    pub fn distance_to(&self, p: Vec3) -> f64 {
        nearest_point_on_segment(self, p).distance(p)
    }
}

/// Point of `s` closest to `p`. A degenerate segment yields `s.a`.
pub fn nearest_point_on_segment(s: &Segment, p: Vec3) -> Vec3 {
    let t = s.closest_parameter(p);
    if t == 0.0 {
        s.a
    } else if t == 1.0 {
        s.b
    } else {
        s.point_at(t)
    }
}

/// Axis-aligned box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vec3, half: Vec3) -> Self {
        Self::new(center - half, center + half)
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x <= self.max.x
            && self.min.y <= self.max.y
            && self.min.z <= self.max.z
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        p.max_by_component(self.min).min_by_component(self.max)
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && self.max.x >= o.min.x
            && self.min.y <= o.max.y
            && self.max.y >= o.min.y
            && self.min.z <= o.max.z
            && self.max.z >= o.min.z
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Vec3::new(margin, margin, margin);
        Aabb::new(self.min - m, self.max + m)
    }
}

/// Solid obstacle primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Box(Aabb),
    Cylinder {
        center_x: f64,
        center_y: f64,
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

impl Primitive {
    pub fn cylinder(center_x: f64, center_y: f64, radius: f64, z_min: f64, z_max: f64) -> Self {
        Primitive::Cylinder { center_x, center_y, radius, z_min, z_max }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Primitive::Sphere { center, radius }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Primitive::Box(b) => b.is_valid(),
            Primitive::Cylinder { center_x, center_y, radius, z_min, z_max } => {
                center_x.is_finite()
                    && center_y.is_finite()
                    && radius.is_finite()
                    && radius > 0.0
                    && z_min.is_finite()
                    && z_max.is_finite()
                    && z_min <= z_max
            }
            Primitive::Sphere { center, radius } => {
                center.is_finite() && radius.is_finite() && radius > 0.0
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        match *self {
            Primitive::Box(b) => b,
            Primitive::Cylinder { center_x, center_y, radius, z_min, z_max } => Aabb::new(
                Vec3::new(center_x - radius, center_y - radius, z_min),
                Vec3::new(center_x + radius, center_y + radius, z_max),
            ),
            Primitive::Sphere { center, radius } => {
                Aabb::from_center(center, Vec3::new(radius, radius, radius))
            }
        }
    }

    /// Closed-solid membership.
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Primitive::Box(b) => b.contains(p),
            Primitive::Cylinder { center_x, center_y, radius, z_min, z_max } => {
                let dx = p.x - center_x;
                let dy = p.y - center_y;
                p.z >= z_min && p.z <= z_max && dx * dx + dy * dy <= radius * radius
            }
            Primitive::Sphere { center, radius } => p.distance_squared(center) <= radius * radius,
        }
    }

    /// Distance from `p` to the solid; zero inside.
    pub fn distance(&self, p: Vec3) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            nearest_point_on_primitive(self, p).distance(p)
        }
    }

    /// Parameter interval `[t_in, t_out]` where the line `origin + t*dir`
    /// lies inside the closed solid, if any.
    pub(crate) fn ray_interval(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        match *self {
            Primitive::Box(b) => slab_interval(b, origin, dir),
            Primitive::Cylinder { center_x, center_y, radius, z_min, z_max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                // vertical extent
                if dir.z.abs() < f64::EPSILON {
                    if origin.z < z_min || origin.z > z_max {
                        return None;
                    }
                } else {
                    let a = (z_min - origin.z) / dir.z;
                    let b = (z_max - origin.z) / dir.z;
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                // radial extent
                let ox = origin.x - center_x;
                let oy = origin.y - center_y;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a < f64::EPSILON * f64::EPSILON {
                    if ox * ox + oy * oy > radius * radius {
                        return None;
                    }
                } else {
                    // closest approach of the projected line to the axis
                    let tc = -(ox * dir.x + oy * dir.y) / a;
                    let cx = ox + tc * dir.x;
                    let cy = oy + tc * dir.y;
                    let d = (cx * cx + cy * cy).sqrt();
                    if d > radius + SURFACE_TOL {
                        return None;
                    }
                    let half = ((radius * radius - d * d).max(0.0) / a).sqrt();
                    t0 = t0.max(tc - half);
                    t1 = t1.min(tc + half);
                }
                (t0 <= t1).then_some((t0, t1))
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let tc = -oc.dot(dir) / a;
                let d = (oc + dir * tc).norm();
                if d > radius + SURFACE_TOL {
                    return None;
                }
                let half = ((radius * radius - d * d).max(0.0) / a).sqrt();
                Some((tc - half, tc + half))
            }
        }
    }

    /// Smallest `t` in `(0, max_range]` where the ray meets this solid's
    /// surface. A ray starting inside reports its exit point.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3, max_range: f64) -> Option<f64> {
        let (t0, t1) = self.ray_interval(origin, dir)?;
        let t = if t0 > 0.0 {
            t0
        } else if t1 > 0.0 {
            t1
        } else {
            return None;
        };
        (t <= max_range).then_some(t)
    }
}

fn slab_interval(b: Aabb, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for axis in 0..3 {
        let o = origin.component(axis);
        let d = dir.component(axis);
        let lo = b.min.component(axis);
        let hi = b.max.component(axis);
        if d.abs() < f64::EPSILON {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let a = (lo - o) / d;
            let c = (hi - o) / d;
            t0 = t0.max(a.min(c));
            t1 = t1.min(a.max(c));
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

/// Nearest point on the surface of `prim` to `p`. Interior points map to the
/// closest boundary point; ties resolve to the first candidate in a fixed
/// order (x, y, z faces for boxes; side, bottom, top for cylinders).
pub fn nearest_point_on_primitive(prim: &Primitive, p: Vec3) -> Vec3 {
    match *prim {
        Primitive::Box(b) => {
            if !b.contains(p) {
                return b.clamp(p);
            }
            let mut best = (f64::INFINITY, 0usize, 0.0f64);
            for axis in 0..3 {
                let c = p.component(axis);
                let lo = b.min.component(axis);
                let hi = b.max.component(axis);
                if c - lo < best.0 {
                    best = (c - lo, axis, lo);
                }
                if hi - c < best.0 {
                    best = (hi - c, axis, hi);
                }
            }
            p.with_component(best.1, best.2)
        }
        Primitive::Cylinder { center_x, center_y, radius, z_min, z_max } => {
            let dx = p.x - center_x;
            let dy = p.y - center_y;
            let r = (dx * dx + dy * dy).sqrt();
            let (ux, uy) = if r > 0.0 { (dx / r, dy / r) } else { (1.0, 0.0) };
            let rim = |z: f64| Vec3::new(center_x + ux * radius, center_y + uy * radius, z);
            let inside_z = p.z >= z_min && p.z <= z_max;
            if r <= radius && inside_z {
                let side = radius - r;
                let bottom = p.z - z_min;
                let top = z_max - p.z;
                if side <= bottom && side <= top {
                    rim(p.z)
                } else if bottom <= top {
                    Vec3::new(p.x, p.y, z_min)
                } else {
                    Vec3::new(p.x, p.y, z_max)
                }
            } else if r <= radius {
                Vec3::new(p.x, p.y, p.z.clamp(z_min, z_max))
            } else {
                rim(p.z.clamp(z_min, z_max))
            }
        }
        Primitive::Sphere { center, radius } => {
            let d = p - center;
            let u = d.try_normalize().unwrap_or(Vec3::X);
            center + u * radius
        }
    }
}

/// Closest ray hit among `primitives`, with a unit-direction check.
pub fn raycast(
    origin: Vec3,
    dir: Vec3,
    max_range: f64,
    primitives: &[Primitive],
) -> Result<Option<f64>, GeometryError> {
    if !origin.is_finite() || !dir.is_finite() || !max_range.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if (dir.norm() - 1.0).abs() > UNIT_TOL {
        return Err(GeometryError::NonUnitDirection);
    }
    Ok(closest_hit(origin, dir, max_range, primitives.iter()))
}

/// Unchecked inner loop of [`raycast`]; `dir` must already be unit length.
pub(crate) fn closest_hit<'a>(
    origin: Vec3,
    dir: Vec3,
    max_range: f64,
    primitives: impl Iterator<Item = &'a Primitive>,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for prim in primitives {
        let limit = best.unwrap_or(max_range);
        if let Some(t) = prim.ray_hit(origin, dir, limit) {
            if best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        }
    }
    best
}

/// Closest pair between a segment and a convex primitive: returns
/// `(point on primitive surface, segment parameter)`. The distance along a
/// segment to a convex set is convex in the parameter, so a golden-section
/// search converges to the global minimum.
pub fn closest_point_primitive_to_segment(prim: &Primitive, seg: &Segment) -> (Vec3, f64) {
    let f = |t: f64| prim.distance(seg.point_at(t));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut t = 0.5 * (lo + hi);
    // endpoints win exact ties with the interior estimate
    for cand in [0.0, 1.0] {
        if f(cand) <= f(t) {
            t = cand;
        }
    }
    (nearest_point_on_primitive(prim, seg.point_at(t)), t)
}
