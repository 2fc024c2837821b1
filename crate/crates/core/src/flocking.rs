//! Preference-modulated flocking: six velocity terms per robot, a speed cap,
//! and explicit Euler integration.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::scalar::{c, Scalar};
use crate::world::{denormalize, Arena, MotionStatus, PreferenceVector, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct FlockParams<T> {
    pub gain_flock: T,
    pub gain_rep: T,
    pub gain_att: T,
    pub gain_saf: T,
    pub gain_hei: T,
    pub gain_ali: T,
    /// Attraction starts beyond this multiple of the preferred inner distance.
    pub attraction_radius_factor: T,
    pub dt: T,
    pub v_max_hard: T,
}

impl<T: Scalar> Default for FlockParams<T> {
    fn default() -> Self {
        Self {
            gain_flock: c(1.0),
            gain_rep: c(0.6),
            gain_att: c(0.15),
            gain_saf: c(1.2),
            gain_hei: c(0.8),
            gain_ali: c(0.3),
            attraction_radius_factor: c(1.5),
            dt: c(0.1),
            v_max_hard: c(10.0),
        }
    }
}

impl<T: Scalar> FlockParams<T> {
    pub fn validate(&self) -> Result<(), String> {
        let gains = [self.gain_flock, self.gain_rep, self.gain_att, self.gain_saf, self.gain_hei, self.gain_ali];
        if gains.iter().any(|g| !(*g >= T::zero())) {
            return Err("flock gains must be non-negative".into());
        }
        if !(self.dt > T::zero()) {
            return Err("dt must be positive".into());
        }
        if !(self.attraction_radius_factor > T::one()) {
            return Err("attraction_radius_factor must exceed 1".into());
        }
        if !(self.v_max_hard > T::zero()) {
            return Err("v_max_hard must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityTerms<T> {
    pub flock: Vec3<T>,
    pub rep: Vec3<T>,
    pub att: Vec3<T>,
    pub saf: Vec3<T>,
    pub hei: Vec3<T>,
    pub ali: Vec3<T>,
}

impl<T: Scalar> VelocityTerms<T> {
    pub fn sum(&self) -> Vec3<T> {
        self.flock + self.rep + self.att + self.saf + self.hei + self.ali
    }
}

/// Unit vector from `j` to `i`. Coincident robots separate along x, with the
/// sign fixed by index order so the pair stays antisymmetric.
fn separation_dir<T: Scalar>(xi: Vec3<T>, xj: Vec3<T>, d: T, i: usize, j: usize) -> Vec3<T> {
    if d > T::zero() {
        (xi - xj) / d
    } else {
        let s = if i > j { T::one() } else { -T::one() };
        Vec3::new(s, T::zero(), T::zero())
    }
}

/// Short-range half-spring repulsion on `i` from `j`.
pub fn repulsion_pair<T: Scalar>(
    i: usize,
    j: usize,
    robots: &[RobotState<T>],
    r0: T,
    params: &FlockParams<T>,
) -> Vec3<T> {
    let (xi, xj) = (robots[i].position, robots[j].position);
    let d = xi.distance(xj);
    if d < r0 {
        separation_dir(xi, xj, d, i, j) * (params.gain_rep * (r0 - d))
    } else {
        Vec3::zero()
    }
}

/// Long-range half-spring attraction on `i` toward `j`.
pub fn attraction_pair<T: Scalar>(
    i: usize,
    j: usize,
    robots: &[RobotState<T>],
    r0: T,
    params: &FlockParams<T>,
) -> Vec3<T> {
    let (xi, xj) = (robots[i].position, robots[j].position);
    let d = xi.distance(xj);
    let cutoff = params.attraction_radius_factor * r0;
    if d > cutoff {
        (xj - xi) / d * (params.gain_att * (d - cutoff))
    } else {
        Vec3::zero()
    }
}

pub fn compute_velocity_terms<T: Scalar>(
    i: usize,
    robots: &[RobotState<T>],
    waypoint: Vec3<T>,
    pref_physical: &MotionStatus<T>,
    arena: &Arena<T>,
    params: &FlockParams<T>,
) -> VelocityTerms<T> {
    let me = robots[i];
    let mut terms = VelocityTerms::default();

    let to_goal = waypoint - me.position;
    let dist = to_goal.norm();
    if dist > T::zero() {
        terms.flock = to_goal / dist * (params.gain_flock * pref_physical.speed);
    }

    let r0 = pref_physical.inner;
    let mut mean_v = Vec3::zero();
    for j in (0..robots.len()).filter(|&j| j != i) {
        terms.rep += repulsion_pair(i, j, robots, r0, params);
        terms.att += attraction_pair(i, j, robots, r0, params);
        mean_v += robots[j].velocity;
    }
    if robots.len() > 1 {
        mean_v = mean_v / c(robots.len() as f64 - 1.0);
        terms.ali = (mean_v - me.velocity) * params.gain_ali;
    }

    if let Some((k, d)) = arena.nearest_obstacle(me.position) {
        let s0 = pref_physical.safety;
        if d < s0 {
            terms.saf = arena.obstacles[k].outward_normal(me.position) * (params.gain_saf * (s0 - d));
        }
    }

    terms.hei = Vec3::new(T::zero(), T::zero(), params.gain_hei * (pref_physical.height - me.position.z));
    terms
}

/// Rescale `v` down to `h_speed` when it is faster; slower vectors pass through.
pub fn apply_speed_limit<T: Scalar>(v: Vec3<T>, h_speed: T) -> Vec3<T> {
    let n = v.norm();
    if n > h_speed && n > T::zero() {
        v * (h_speed / n)
    } else {
        v
    }
}

/// Advance every robot by one `dt` using a frozen snapshot of the flock.
pub fn step<T: Scalar>(
    robots: &[RobotState<T>],
    waypoint: Vec3<T>,
    pref: &PreferenceVector<T>,
    arena: &Arena<T>,
    params: &FlockParams<T>,
) -> Vec<RobotState<T>> {
    let physical = denormalize(pref);
    let cap = physical.speed.min(params.v_max_hard);
    (0..robots.len())
        .map(|i| {
            let terms = compute_velocity_terms(i, robots, waypoint, &physical, arena, params);
            let velocity = apply_speed_limit(terms.sum(), cap);
            let position = arena.clamp_position(robots[i].position + velocity * params.dt);
            RobotState { position, velocity }
        })
        .collect()
}
