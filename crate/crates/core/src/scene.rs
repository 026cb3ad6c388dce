//! Geometry, rigid object models and the workspace layout shared by the
//! simulator, the ballistic controller and the learner.
//!
//! Conventions: the robot base sits at the world origin with +z up. Objects
//! are described in an object frame whose origin is the centre of their
//! bounding box; elongated objects have their principal axis along local +x.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Length of the horizontal (x, y) part.
    pub fn planar_norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// z component of the cross product of the horizontal parts.
    pub fn cross_z(self, o: Vec3) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

/// Planar pose of an object resting in the bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Radians, normalized to [0, 2π).
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: yaw.rem_euclid(TAU) }
    }

    /// Object-frame (x, y) to world (x, y).
    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    /// World (x, y) to object-frame (x, y).
    pub fn to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (wx - self.x, wy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Solid building block of an object. Cylinders and capsules run along local +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Cuboid { center: Vec3, half: Vec3 },
    Cylinder { center: Vec3, radius: f64, half_length: f64 },
    Capsule { center: Vec3, radius: f64, half_length: f64 },
}

impl Primitive {
    pub fn center(&self) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. }
            | Primitive::Cuboid { center, .. }
            | Primitive::Cylinder { center, .. }
            | Primitive::Capsule { center, .. } => center,
        }
    }

    pub fn volume(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Primitive::Cuboid { half, .. } => 8.0 * half.x * half.y * half.z,
            Primitive::Cylinder { radius, half_length, .. } => PI * radius * radius * 2.0 * half_length,
            Primitive::Capsule { radius, half_length, .. } => {
                PI * radius * radius * 2.0 * half_length + 4.0 / 3.0 * PI * radius.powi(3)
            }
        }
    }

    /// Lowest z reached by the primitive.
    pub fn bottom(&self) -> f64 {
        match *self {
            Primitive::Sphere { center, radius }
            | Primitive::Cylinder { center, radius, .. }
            | Primitive::Capsule { center, radius, .. } => center.z - radius,
            Primitive::Cuboid { center, half } => center.z - half.z,
        }
    }

    /// Axis-aligned half extents of the footprint in the object frame.
    pub fn footprint_half(&self) -> (f64, f64) {
        match *self {
            Primitive::Sphere { radius, .. } => (radius, radius),
            Primitive::Cuboid { half, .. } => (half.x, half.y),
            Primitive::Cylinder { radius, half_length, .. } => (half_length, radius),
            Primitive::Capsule { radius, half_length, .. } => (half_length + radius, radius),
        }
    }

    /// Height of the upper surface above local point (x, y), if covered.
    pub fn top_at(&self, x: f64, y: f64) -> Option<f64> {
        let c = self.center();
        let (dx, dy) = (x - c.x, y - c.y);
        match *self {
            Primitive::Sphere { radius, .. } => {
                let d2 = dx * dx + dy * dy;
                (d2 <= radius * radius).then(|| c.z + (radius * radius - d2).sqrt())
            }
            Primitive::Cuboid { half, .. } => (dx.abs() <= half.x && dy.abs() <= half.y).then_some(c.z + half.z),
            Primitive::Cylinder { radius, half_length, .. } => {
                (dx.abs() <= half_length && dy.abs() <= radius).then(|| c.z + (radius * radius - dy * dy).sqrt())
            }
            Primitive::Capsule { radius, half_length, .. } => {
                let ax = (dx.abs() - half_length).max(0.0);
                let d2 = ax * ax + dy * dy;
                (d2 <= radius * radius).then(|| c.z + (radius * radius - d2).sqrt())
            }
        }
    }

    /// Planar distance from local (x, y) to the footprint; zero inside.
    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let c = self.center();
        let (dx, dy) = ((x - c.x).abs(), (y - c.y).abs());
        match *self {
            Primitive::Sphere { radius, .. } => (dx.hypot(dy) - radius).max(0.0),
            Primitive::Capsule { radius, half_length, .. } => ((dx - half_length).max(0.0).hypot(dy) - radius).max(0.0),
            _ => {
                let (hx, hy) = self.footprint_half();
                (dx - hx).max(0.0).hypot((dy - hy).max(0.0))
            }
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center();
        match *self {
            Primitive::Sphere { radius, .. } => d.norm() <= radius,
            Primitive::Cuboid { half, .. } => d.x.abs() <= half.x && d.y.abs() <= half.y && d.z.abs() <= half.z,
            Primitive::Cylinder { radius, half_length, .. } => {
                d.x.abs() <= half_length && d.y.hypot(d.z) <= radius
            }
            Primitive::Capsule { radius, half_length, .. } => {
                let ax = (d.x.abs() - half_length).max(0.0);
                (ax * ax + d.y * d.y + d.z * d.z).sqrt() <= radius
            }
        }
    }

    /// Local-frame axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let c = self.center();
        let (hx, hy) = self.footprint_half();
        let hz = c.z - self.bottom();
        (Vec3::new(c.x - hx, c.y - hy, c.z - hz), Vec3::new(c.x + hx, c.y + hy, c.z + hz))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Ball,
    Cube,
    Rod,
    Hammer,
    ShortRod,
    LongRod,
    TShape,
    Capsule,
}

impl ObjectKind {
    pub const SEEN: [ObjectKind; 4] = [ObjectKind::Ball, ObjectKind::Cube, ObjectKind::Rod, ObjectKind::Hammer];
    pub const UNSEEN: [ObjectKind; 4] =
        [ObjectKind::ShortRod, ObjectKind::LongRod, ObjectKind::TShape, ObjectKind::Capsule];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Ball => "ball",
            ObjectKind::Cube => "cube",
            ObjectKind::Rod => "rod",
            ObjectKind::Hammer => "hammer",
            ObjectKind::ShortRod => "short_rod",
            ObjectKind::LongRod => "long_rod",
            ObjectKind::TShape => "t_shape",
            ObjectKind::Capsule => "capsule",
        }
    }

    pub fn is_seen(self) -> bool {
        Self::SEEN.contains(&self)
    }

    pub fn is_elongated(self) -> bool {
        !matches!(self, ObjectKind::Ball | ObjectKind::Cube)
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectKind::SEEN
            .into_iter()
            .chain(ObjectKind::UNSEEN)
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown object kind '{s}'")))
    }
}

/// Coefficients the simulator uses but the learner never observes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenDynamics {
    /// Quadratic drag coefficient β (1/m).
    pub drag: f64,
    /// Lever amplification κ (1/m): launch speed scales by (1 + κ·s).
    pub lever: f64,
    /// Rendered intensity in [0, 1].
    pub intensity: f64,
}

/// Per-kind hidden coefficients. The defaults mirror `configs/desk.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsTable {
    pub ball: HiddenDynamics,
    pub cube: HiddenDynamics,
    pub rod: HiddenDynamics,
    pub hammer: HiddenDynamics,
    pub short_rod: HiddenDynamics,
    pub long_rod: HiddenDynamics,
    pub t_shape: HiddenDynamics,
    pub capsule: HiddenDynamics,
}

impl Default for DynamicsTable {
    fn default() -> Self {
        let h = |drag, lever, intensity| HiddenDynamics { drag, lever, intensity };
        Self {
            ball: h(0.30, 0.0, 0.9),
            cube: h(0.02, 0.0, 0.7),
            rod: h(0.05, 1.2, 0.5),
            hammer: h(0.05, 1.5, 0.3),
            short_rod: h(0.05, 1.2, 0.55),
            long_rod: h(0.05, 1.2, 0.45),
            t_shape: h(0.05, 1.5, 0.25),
            capsule: h(0.15, 1.0, 0.85),
        }
    }
}

impl DynamicsTable {
    pub fn get(&self, kind: ObjectKind) -> HiddenDynamics {
        match kind {
            ObjectKind::Ball => self.ball,
            ObjectKind::Cube => self.cube,
            ObjectKind::Rod => self.rod,
            ObjectKind::Hammer => self.hammer,
            ObjectKind::ShortRod => self.short_rod,
            ObjectKind::LongRod => self.long_rod,
            ObjectKind::TShape => self.t_shape,
            ObjectKind::Capsule => self.capsule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for kind in ObjectKind::SEEN.into_iter().chain(ObjectKind::UNSEEN) {
            let d = self.get(kind);
            if !(d.drag >= 0.0 && d.lever >= 0.0 && (0.0..=1.0).contains(&d.intensity)) {
                return Err(Error::Config(format!("bad hidden dynamics for {kind}: {d:?}")));
            }
        }
        Ok(())
    }
}

/// Rigid object built from at most two primitives with uniform density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub kind: ObjectKind,
    pub primitives: Vec<Primitive>,
    /// Centre of mass in the object frame.
    pub com: Vec3,
    /// Principal axis (unit) in the object frame.
    pub axis: Vec3,
    pub drag_coeff: f64,
    pub lever_coeff: f64,
    pub visual_intensity: f64,
}

impl ObjectModel {
    pub fn new(kind: ObjectKind, primitives: Vec<Primitive>, dynamics: HiddenDynamics) -> Self {
        let com = volume_weighted_centroid(&primitives);
        Self {
            kind,
            primitives,
            com,
            axis: Vec3::new(1.0, 0.0, 0.0),
            drag_coeff: dynamics.drag,
            lever_coeff: dynamics.lever,
            visual_intensity: dynamics.intensity,
        }
    }

    pub fn is_elongated(&self) -> bool {
        self.kind.is_elongated()
    }

    /// Distance from the object origin down to its resting surface.
    /// Vertical extent when resting on a surface.
    pub fn height(&self) -> f64 {
        let (lo, hi) = self.bounds();
        hi.z - lo.z
    }

    pub fn rest_offset(&self) -> f64 {
        -self.primitives.iter().map(Primitive::bottom).fold(f64::INFINITY, f64::min)
    }

    pub fn top_at(&self, x: f64, y: f64) -> Option<f64> {
        self.primitives.iter().filter_map(|p| p.top_at(x, y)).reduce(f64::max)
    }

    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        self.primitives.iter().map(|p| p.footprint_distance(x, y)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.primitives.iter().any(|q| q.contains(p))
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        self.primitives.iter().map(Primitive::bounds).fold(
            (Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY), -Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY)),
            |(lo, hi), (a, b)| {
                (
                    Vec3::new(lo.x.min(a.x), lo.y.min(a.y), lo.z.min(a.z)),
                    Vec3::new(hi.x.max(b.x), hi.y.max(b.y), hi.z.max(b.z)),
                )
            },
        )
    }

    /// Range of signed offsets along the axis, measured from the CoM.
    pub fn axial_range(&self) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        let mut range = (f64::INFINITY, f64::NEG_INFINITY);
        for corner in 0..8 {
            let p = Vec3::new(
                if corner & 1 == 0 { lo.x } else { hi.x },
                if corner & 2 == 0 { lo.y } else { hi.y },
                if corner & 4 == 0 { lo.z } else { hi.z },
            );
            let s = (p - self.com).dot(self.axis);
            range = (range.0.min(s), range.1.max(s));
        }
        range
    }
}

/// Uniform-density centroid of a primitive union (primitives assumed disjoint).
pub fn volume_weighted_centroid(prims: &[Primitive]) -> Vec3 {
    let total: f64 = prims.iter().map(Primitive::volume).sum();
    prims.iter().fold(Vec3::ZERO, |acc, p| acc + p.center() * (p.volume() / total))
}

/// Ball, cube, rod and hammer at `scale` times their nominal dimensions.
pub fn make_standard_objects(scale: f64) -> Vec<ObjectModel> {
    make_standard_objects_with(scale, &DynamicsTable::default())
}

pub fn make_standard_objects_with(scale: f64, table: &DynamicsTable) -> Vec<ObjectModel> {
    assert!(scale > 0.0, "scale must be positive");
    ObjectKind::SEEN.iter().map(|&k| make_object(k, scale, table)).collect()
}

/// Held-out objects: rescaled rods and two new composites.
pub fn make_unseen_objects() -> Vec<ObjectModel> {
    make_unseen_objects_with(&DynamicsTable::default())
}

pub fn make_unseen_objects_with(table: &DynamicsTable) -> Vec<ObjectModel> {
    ObjectKind::UNSEEN.iter().map(|&k| make_object(k, 1.0, table)).collect()
}

/// Builds one object of `kind` at `scale` times its nominal size.
pub fn make_object(kind: ObjectKind, scale: f64, table: &DynamicsTable) -> ObjectModel {
    let s = scale;
    let cyl = |cx: f64, cz: f64, r: f64, len: f64| Primitive::Cylinder {
        center: Vec3::new(cx, 0.0, cz),
        radius: r,
        half_length: len / 2.0,
    };
    let cuboid = |cx: f64, cz: f64, lx: f64, ly: f64, lz: f64| Primitive::Cuboid {
        center: Vec3::new(cx, 0.0, cz),
        half: Vec3::new(lx / 2.0, ly / 2.0, lz / 2.0),
    };
    let prims = match kind {
        ObjectKind::Ball => vec![Primitive::Sphere { center: Vec3::ZERO, radius: 0.02 * s }],
        ObjectKind::Cube => vec![cuboid(0.0, 0.0, 0.04 * s, 0.04 * s, 0.04 * s)],
        ObjectKind::Rod => vec![cyl(0.0, 0.0, 0.015 * s, 0.16 * s)],
        ObjectKind::ShortRod => rod_scaled(0.75),
        ObjectKind::LongRod => rod_scaled(1.25),
        ObjectKind::Hammer => {
            // 12 cm handle (2 cm diameter) ending in a 4 x 10 x 2.5 cm head, 16 cm overall.
            let head_z = 0.0125 * s;
            vec![
                cyl(-0.02 * s, -head_z + 0.01 * s, 0.01 * s, 0.12 * s),
                cuboid(0.06 * s, 0.0, 0.04 * s, 0.10 * s, 0.025 * s),
            ]
        }
        ObjectKind::TShape => vec![
            cuboid(-0.02 * s, 0.0, 0.10 * s, 0.02 * s, 0.02 * s),
            cuboid(0.04 * s, 0.0, 0.02 * s, 0.08 * s, 0.02 * s),
        ],
        ObjectKind::Capsule => vec![Primitive::Capsule {
            center: Vec3::ZERO,
            radius: 0.02 * s,
            half_length: 0.04 * s,
        }],
    };
    ObjectModel::new(kind, prims, table.get(kind))
}

fn rod_scaled(f: f64) -> Vec<Primitive> {
    vec![Primitive::Cylinder { center: Vec3::ZERO, radius: 0.015 * f, half_length: 0.08 * f }]
}

/// Geometry of the pick-and-throw cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkspaceConfig {
    /// World (x, y) of the bin corner with the smallest coordinates.
    pub bin_origin: [f64; 2],
    /// Bin extents along x and y (m).
    pub bin_extent: [f64; 2],
    /// Heightmap cell size (m/pixel).
    pub resolution: f64,
    pub num_rotations: usize,
    /// Release height c_h (m).
    pub release_height: f64,
    /// Release radial distance c_d from the robot base (m).
    pub release_radius: f64,
    /// Gravity magnitude (m/s²).
    pub gravity: f64,
    /// Box opening size along x and y (m).
    pub box_opening: [f64; 2],
    pub box_height: f64,
    /// z of the box openings, i.e. the landing plane (m).
    pub landing_height: f64,
    /// Centres of the box openings.
    pub boxes: Vec<Vec3>,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            bin_origin: [0.2, -0.175],
            bin_extent: [0.45, 0.35],
            resolution: 0.005,
            num_rotations: 16,
            release_height: 0.04,
            release_radius: 0.7,
            gravity: 9.8,
            box_opening: [0.25, 0.15],
            box_height: 0.20,
            landing_height: 0.0,
            boxes: train_box_layout(0.0),
        }
    }
}

/// Box-grid pitch; twice the opening so a displaced grid never overlaps.
pub const BOX_PITCH: [f64; 2] = [0.5, 0.3];

/// 3 x 4 grid of box openings beyond the release circle.
pub fn train_box_layout(landing_height: f64) -> Vec<Vec3> {
    let mut boxes = Vec::with_capacity(12);
    for row in 0..3 {
        for col in 0..4 {
            let x = 1.0 + BOX_PITCH[0] * row as f64;
            let y = -0.45 + BOX_PITCH[1] * col as f64;
            boxes.push(Vec3::new(x, y, landing_height));
        }
    }
    boxes
}

/// Training grid shifted by half a pitch in x and y.
pub fn displaced_box_layout(landing_height: f64) -> Vec<Vec3> {
    train_box_layout(landing_height)
        .into_iter()
        .map(|b| Vec3::new(b.x + BOX_PITCH[0] / 2.0, b.y + BOX_PITCH[1] / 2.0, b.z))
        .collect()
}

/// True when any two openings (one from each layout) share positive area.
pub fn layouts_overlap(a: &[Vec3], b: &[Vec3], opening: [f64; 2]) -> bool {
    a.iter().any(|p| {
        b.iter().any(|q| {
            let ox = opening[0] - (p.x - q.x).abs();
            let oy = opening[1] - (p.y - q.y).abs();
            ox > 1e-9 && oy > 1e-9
        })
    })
}

impl WorkspaceConfig {
    /// Heightmap width in pixels (x direction).
    pub fn width(&self) -> usize {
        (self.bin_extent[0] / self.resolution).round() as usize
    }

    /// Heightmap height in pixels (y direction).
    pub fn height(&self) -> usize {
        (self.bin_extent[1] / self.resolution).round() as usize
    }

    pub fn with_boxes(mut self, boxes: Vec<Vec3>) -> Self {
        self.boxes = boxes;
        self
    }

    /// World (x, y) at the centre of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.bin_origin[0] + (col as f64 + 0.5) * self.resolution,
            self.bin_origin[1] + (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Opening-rectangle containment test for box `b`.
    pub fn in_box(&self, b: usize, p: Vec3) -> bool {
        let c = self.boxes[b];
        (p.x - c.x).abs() <= self.box_opening[0] / 2.0 && (p.y - c.y).abs() <= self.box_opening[1] / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &extent) in self.bin_extent.iter().enumerate() {
            let px = extent / self.resolution;
            if !(px >= 1.0 && (px - px.round()).abs() < 1e-6) {
                return Err(Error::Config(format!(
                    "bin extent {extent} along axis {i} is not a whole number of {} m pixels",
                    self.resolution
                )));
            }
        }
        if self.num_rotations == 0 {
            return Err(Error::Config("num_rotations must be at least 1".into()));
        }
        if !(self.gravity > 0.0 && self.release_radius > 0.0) {
            return Err(Error::Config("gravity and release radius must be positive".into()));
        }
        if self.boxes.is_empty() {
            return Err(Error::Config("no target boxes".into()));
        }
        for b in &self.boxes {
            if b.planar_norm() <= self.release_radius {
                return Err(Error::Config(format!("box at {b} lies within the release radius")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ball_has_nominal_diameter() {
        let objs = make_standard_objects(1.0);
        let ball = &objs[0];
        let (lo, hi) = ball.bounds();
        assert!((hi.x - lo.x - 0.04).abs() < 1e-12);
        assert_eq!(ball.kind, ObjectKind::Ball);
    }

    #[test]
    fn symmetric_primitives_have_centered_com() {
        for o in make_standard_objects(1.0).iter().filter(|o| o.primitives.len() == 1) {
            assert!(o.com.norm() < 1e-15, "{} com {}", o.kind, o.com);
        }
    }

    #[test]
    fn hammer_com_matches_centroid_integral() {
        // Handle: π r² L at x = -0.02, head: 0.04 * 0.10 * 0.025 at x = 0.06.
        let v_handle = PI * 0.01f64.powi(2) * 0.12;
        let v_head = 0.04 * 0.10 * 0.025;
        let expected_x = (v_handle * -0.02 + v_head * 0.06) / (v_handle + v_head);
        let hammer = &make_standard_objects(1.0)[3];
        assert!((hammer.com.x - expected_x).abs() < 1e-12);
        assert!(hammer.com.x > -0.02, "CoM shifts from the handle midpoint toward the head");
        assert!(hammer.contains(hammer.com));
        assert!((expected_x - 0.038_104).abs() < 1e-5);
    }

    #[test]
    fn composite_com_agrees_with_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let objs: Vec<_> = make_standard_objects(1.0).into_iter().chain(make_unseen_objects()).collect();
        for o in objs.iter().filter(|o| o.primitives.len() > 1) {
            let (lo, hi) = o.bounds();
            let (mut acc, mut n) = (Vec3::ZERO, 0usize);
            while n < 400_000 {
                let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
                if o.contains(p) {
                    acc = acc + p;
                    n += 1;
                }
            }
            let mc = acc * (1.0 / n as f64);
            assert!((mc - o.com).norm() < 1e-3, "{}: mc {} vs {}", o.kind, mc, o.com);
        }
    }

    #[test]
    fn unseen_set_is_disjoint_and_t_shape_is_symmetric() {
        let seen: Vec<_> = make_standard_objects(1.0).iter().map(|o| o.kind).collect();
        let unseen = make_unseen_objects();
        assert!(unseen.len() >= 4);
        assert!(unseen.iter().all(|o| !seen.contains(&o.kind)));
        let t = unseen.iter().find(|o| o.kind == ObjectKind::TShape).unwrap();
        assert_eq!(t.com.y, 0.0);
        let table = DynamicsTable::default();
        let cap = unseen.iter().find(|o| o.kind == ObjectKind::Capsule).unwrap();
        assert!(cap.drag_coeff < table.ball.drag && cap.drag_coeff > table.rod.drag);
    }

    #[test]
    fn hammer_axial_range_is_asymmetric() {
        let hammer = make_object(ObjectKind::Hammer, 1.0, &DynamicsTable::default());
        let (lo, hi) = hammer.axial_range();
        assert!((hi - lo - 0.16).abs() < 1e-12);
        assert!(lo < -0.11 && hi < 0.05);
    }

    #[test]
    fn pose_round_trips() {
        let pose = Pose2D::new(0.3, -0.1, 7.0);
        assert!(pose.yaw < TAU);
        let (wx, wy) = pose.to_world(0.05, -0.02);
        let (lx, ly) = pose.to_local(wx, wy);
        assert!((lx - 0.05).abs() < 1e-12 && (ly + 0.02).abs() < 1e-12);
    }

    #[test]
    fn default_workspace_is_valid_and_layouts_disjoint() {
        let ws = WorkspaceConfig::default();
        ws.validate().unwrap();
        assert_eq!((ws.width(), ws.height()), (90, 70));
        let train = train_box_layout(0.0);
        let test = displaced_box_layout(0.0);
        assert!(!layouts_overlap(&train, &test, ws.box_opening));
        assert!(layouts_overlap(&train, &train, ws.box_opening));
    }

    #[test]
    fn fractional_pixel_count_is_rejected() {
        let ws = WorkspaceConfig { resolution: 0.004, ..Default::default() };
        assert!(ws.validate().is_err());
    }
}
