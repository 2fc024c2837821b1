//! Arena, robots and the conversions between physical flock statistics and
//! the normalized preference space.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec2, Vec3};
use crate::scalar::{c, Scalar};

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Obstacle<T> {
    pub center: Vec3<T>,
    pub half_extents: Vec3<T>,
}

impl<T: Scalar> Obstacle<T> {
    pub fn new(center: Vec3<T>, half_extents: Vec3<T>) -> Self {
        Self { center, half_extents }
    }

    pub fn min_corner(&self) -> Vec3<T> {
        self.center - self.half_extents
    }

    pub fn max_corner(&self) -> Vec3<T> {
        self.center + self.half_extents
    }

    fn closest_point(&self, p: Vec3<T>) -> Vec3<T> {
        let lo = self.min_corner();
        let hi = self.max_corner();
        Vec3::from_axes(|k| p.axis(k).max(lo.axis(k)).min(hi.axis(k)))
    }

    /// Distance from `p` to the box surface; zero inside the box.
    pub fn surface_distance(&self, p: Vec3<T>) -> T {
        p.distance(self.closest_point(p))
    }

    /// Ground-plane distance from `p` to the box footprint; zero inside it.
    pub fn footprint_distance(&self, p: Vec2<T>) -> T {
        let lo = self.min_corner();
        let hi = self.max_corner();
        let dx = (lo.x - p.x).max(T::zero()).max(p.x - hi.x);
        let dy = (lo.y - p.y).max(T::zero()).max(p.y - hi.y);
        (dx * dx + dy * dy).sqrt()
    }

    /// Unit vector pointing away from the box at `p`.
    ///
    /// Outside the box this is the direction from the closest surface point.
    /// Inside, it is the face normal of the shallowest exit, lowest axis first.
    pub fn outward_normal(&self, p: Vec3<T>) -> Vec3<T> {
        let q = self.closest_point(p);
        let d = p - q;
        let n = d.norm();
        if n > T::zero() {
            return d / n;
        }
        let lo = self.min_corner();
        let hi = self.max_corner();
        let mut best = (T::infinity(), 0usize, T::one());
        for k in 0..3 {
            let to_hi = hi.axis(k) - p.axis(k);
            let to_lo = p.axis(k) - lo.axis(k);
            if to_hi < best.0 {
                best = (to_hi, k, T::one());
            }
            if to_lo < best.0 {
                best = (to_lo, k, -T::one());
            }
        }
        let (_, axis, sign) = best;
        Vec3::from_axes(|k| if k == axis { sign } else { T::zero() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TargetZone<T> {
    pub center: Vec2<T>,
    pub radius: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Arena<T> {
    pub width: T,
    pub depth: T,
    pub max_altitude: T,
    #[serde(default)]
    pub obstacles: Vec<Obstacle<T>>,
    #[serde(default)]
    pub targets: Vec<TargetZone<T>>,
}

impl<T: Scalar> Arena<T> {
    pub fn empty(width: T, depth: T, max_altitude: T) -> Self {
        Self { width, depth, max_altitude, obstacles: Vec::new(), targets: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArena(m));
        if !(self.width > T::zero() && self.depth > T::zero() && self.max_altitude > T::zero()) {
            return bad("width, depth and max_altitude must be positive".into());
        }
        let inside = |x: T, y: T| x >= T::zero() && x <= self.width && y >= T::zero() && y <= self.depth;
        for (i, o) in self.obstacles.iter().enumerate() {
            let h = o.half_extents;
            if !(h.x > T::zero() && h.y > T::zero() && h.z > T::zero()) {
                return bad(format!("obstacle {i} has non-positive half extents"));
            }
            let (lo, hi) = (o.min_corner(), o.max_corner());
            if !inside(lo.x, lo.y) || !inside(hi.x, hi.y) {
                return bad(format!("obstacle {i} footprint leaves the arena"));
            }
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(t.radius > T::zero()) {
                return bad(format!("target {i} has non-positive radius"));
            }
            let (x, y, r) = (t.center.x, t.center.y, t.radius);
            if !inside(x - r, y - r) || !inside(x + r, y + r) {
                return bad(format!("target {i} footprint leaves the arena"));
            }
        }
        Ok(())
    }

    /// Nearest obstacle to `p` by surface distance, first index on ties.
    pub fn nearest_obstacle(&self, p: Vec3<T>) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        for (i, o) in self.obstacles.iter().enumerate() {
            let d = o.surface_distance(p);
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Ground-plane distance from `p` to the nearest target center.
    pub fn nearest_target_distance(&self, p: Vec3<T>) -> T {
        self.targets
            .iter()
            .map(|t| p.xy().distance(t.center))
            .fold(T::infinity(), T::min)
    }

    pub fn clamp_position(&self, p: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            p.x.max(T::zero()).min(self.width),
            p.y.max(T::zero()).min(self.depth),
            p.z.max(T::zero()).min(self.max_altitude),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let arena: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        arena.validate()?;
        Ok(arena)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RobotState<T> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
}

impl<T: Scalar> RobotState<T> {
    pub fn at(position: Vec3<T>) -> Self {
        Self { position, velocity: Vec3::zero() }
    }
}

/// The four flock behaviors a user expresses preferences over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Inner,
    Height,
    Speed,
    Safety,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [Behavior::Inner, Behavior::Height, Behavior::Speed, Behavior::Safety];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Inner => "inner",
            Behavior::Height => "height",
            Behavior::Speed => "speed",
            Behavior::Safety => "safety",
        }
    }
}

macro_rules! four_field_struct {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
        #[serde(bound = "T: Scalar")]
        pub struct $name<T> {
            pub inner: T,
            pub height: T,
            pub speed: T,
            pub safety: T,
        }

        impl<T: Scalar> $name<T> {
            pub const fn new(inner: T, height: T, speed: T, safety: T) -> Self {
                Self { inner, height, speed, safety }
            }

            pub fn splat(v: T) -> Self {
                Self::new(v, v, v, v)
            }

            pub fn to_array(self) -> [T; 4] {
                [self.inner, self.height, self.speed, self.safety]
            }

            pub fn from_array([inner, height, speed, safety]: [T; 4]) -> Self {
                Self { inner, height, speed, safety }
            }

            pub fn get(&self, b: Behavior) -> T {
                self.to_array()[b.index()]
            }

            pub fn map(self, f: impl Fn(Behavior, T) -> T) -> Self {
                let a = self.to_array();
                Self::from_array(std::array::from_fn(|k| f(Behavior::ALL[k], a[k])))
            }
        }
    };
}

four_field_struct!(
    /// Measured flock statistics in physical units: minimum pairwise distance (m),
    /// mean altitude (m), mean speed (m/s), minimum obstacle clearance (m).
    MotionStatus
);

four_field_struct!(
    /// Normalized preference or status, every component in `[0, 1]`.
    PreferenceVector
);

impl<T: Scalar> PreferenceVector<T> {
    pub fn is_normalized(&self) -> bool {
        self.to_array().iter().all(|v| *v >= T::zero() && *v <= T::one())
    }
}

/// Physical range of each behavior; the affine map sends `lo` to 0 and `hi` to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorRange {
    pub lo: f64,
    pub hi: f64,
}

pub const INNER_RANGE: BehaviorRange = BehaviorRange { lo: 2.0, hi: 5.0 };
pub const HEIGHT_RANGE: BehaviorRange = BehaviorRange { lo: 0.0, hi: 30.0 };
pub const SPEED_RANGE: BehaviorRange = BehaviorRange { lo: 3.0, hi: 8.0 };
pub const SAFETY_RANGE: BehaviorRange = BehaviorRange { lo: 0.0, hi: 3.0 };

pub const RANGES: [BehaviorRange; 4] = [INNER_RANGE, HEIGHT_RANGE, SPEED_RANGE, SAFETY_RANGE];

/// Clamp each measurement into its physical range, then map affinely onto `[0, 1]`.
pub fn normalize<T: Scalar>(status: &MotionStatus<T>) -> PreferenceVector<T> {
    let s = status.to_array();
    PreferenceVector::from_array(std::array::from_fn(|k| {
        let (lo, hi) = (c::<T>(RANGES[k].lo), c::<T>(RANGES[k].hi));
        (s[k].max(lo).min(hi) - lo) / (hi - lo)
    }))
}

pub fn denormalize<T: Scalar>(pref: &PreferenceVector<T>) -> MotionStatus<T> {
    let p = pref.to_array();
    MotionStatus::from_array(std::array::from_fn(|k| {
        let (lo, hi) = (c::<T>(RANGES[k].lo), c::<T>(RANGES[k].hi));
        lo + p[k] * (hi - lo)
    }))
}

pub fn measure_motion_status<T: Scalar>(robots: &[RobotState<T>], arena: &Arena<T>) -> Result<MotionStatus<T>> {
    if robots.len() < 2 {
        return Err(Error::InsufficientFlock(robots.len()));
    }
    let n: T = c(robots.len() as f64);
    let mut inner = T::infinity();
    for (i, a) in robots.iter().enumerate() {
        for b in &robots[i + 1..] {
            inner = inner.min(a.position.distance(b.position));
        }
    }
    let height = robots.iter().map(|r| r.position.z).sum::<T>() / n;
    let speed = robots.iter().map(|r| r.velocity.norm()).sum::<T>() / n;
    let safety = robots
        .iter()
        .filter_map(|r| arena.nearest_obstacle(r.position).map(|(_, d)| d))
        .fold(T::infinity(), T::min);
    let safety = if safety.is_finite() { safety } else { c(SAFETY_RANGE.hi) };
    Ok(MotionStatus { inner, height, speed, safety })
}

pub fn centroid<T: Scalar>(robots: &[RobotState<T>]) -> Vec3<T> {
    let n: T = c(robots.len().max(1) as f64);
    robots.iter().fold(Vec3::zero(), |acc, r| acc + r.position) / n
}

/// Near/far classification relative to obstacles (first letter) and targets (second letter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Situation {
    FF,
    TF,
    FT,
    TT,
}

impl Situation {
    pub const ALL: [Situation; 4] = [Situation::FF, Situation::TF, Situation::FT, Situation::TT];

    pub fn from_flags(near_obstacle: bool, near_target: bool) -> Self {
        match (near_obstacle, near_target) {
            (false, false) => Situation::FF,
            (true, false) => Situation::TF,
            (false, true) => Situation::FT,
            (true, true) => Situation::TT,
        }
    }

    pub fn near_obstacle(self) -> bool {
        matches!(self, Situation::TF | Situation::TT)
    }

    pub fn near_target(self) -> bool {
        matches!(self, Situation::FT | Situation::TT)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Situation::FF => "FF",
            Situation::TF => "TF",
            Situation::FT => "FT",
            Situation::TT => "TT",
        }
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SituationThresholds {
    pub obstacle: f64,
    pub target: f64,
}

impl Default for SituationThresholds {
    fn default() -> Self {
        Self { obstacle: 25.0, target: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SituationContext<T> {
    pub near_obstacle: bool,
    pub near_target: bool,
    pub dist_obstacle: T,
    pub dist_target: T,
}

impl<T: Scalar> SituationContext<T> {
    pub fn situation(&self) -> Situation {
        Situation::from_flags(self.near_obstacle, self.near_target)
    }
}

/// Obstacle distance is to the nearest box surface; target distance is
/// measured on the ground plane to the nearest target center.
pub fn classify_situation<T: Scalar>(
    centroid: Vec3<T>,
    arena: &Arena<T>,
    thresholds: &SituationThresholds,
) -> SituationContext<T> {
    let dist_obstacle = arena.nearest_obstacle(centroid).map_or(T::infinity(), |(_, d)| d);
    let dist_target = arena.nearest_target_distance(centroid);
    SituationContext {
        near_obstacle: dist_obstacle <= c(thresholds.obstacle),
        near_target: dist_target <= c(thresholds.target),
        dist_obstacle,
        dist_target,
    }
}
