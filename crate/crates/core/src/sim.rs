//! Scenario files and the stateful flock simulation that follows a planned path.

use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flocking::{self, FlockParams};
use crate::geometry::{Vec2, Vec3};
use crate::net::FeatureVector;
use crate::planner::{build_grid, plan, GridMap, Path, DEFAULT_CELL_SIZE, ROBOT_RADIUS};
use crate::scalar::{c, Scalar};
use crate::seed;
use crate::world::{
    centroid, classify_situation, denormalize, measure_motion_status, normalize, Arena, Obstacle, PreferenceVector,
    RobotState, SituationContext, SituationThresholds, TargetZone,
};

fn default_robots() -> usize {
    5
}

/// Arena plus flocking constants and optional fixed start/goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scenario<T> {
    #[serde(flatten)]
    pub arena: Arena<T>,
    #[serde(default)]
    pub flock_params: FlockParams<T>,
    #[serde(default)]
    pub start: Option<Vec2<T>>,
    #[serde(default)]
    pub goal: Option<Vec2<T>>,
    #[serde(default = "default_robots")]
    pub n_robots: usize,
}

impl<T: Scalar> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.flock_params.validate().map_err(Error::InvalidConfig)?;
        if self.n_robots < 2 {
            return Err(Error::InsufficientFlock(self.n_robots));
        }
        if self.arena.max_altitude < c(crate::world::HEIGHT_RANGE.hi) {
            return Err(Error::InvalidArena("max_altitude must cover the 30 m height range".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    /// 400 m x 400 m disaster site with box buildings and victim search areas.
    pub fn disaster_site() -> Self {
        let b = |x: f64, y: f64, hx: f64, hy: f64, hz: f64| {
            Obstacle::new(Vec3::new(c(x), c(y), c(hz)), Vec3::new(c(hx), c(hy), c(hz)))
        };
        let t = |x: f64, y: f64, r: f64| TargetZone { center: Vec2::new(c(x), c(y)), radius: c(r) };
        Self {
            arena: Arena {
                width: c(400.0),
                depth: c(400.0),
                max_altitude: c(40.0),
                obstacles: vec![
                    b(100.0, 100.0, 15.0, 15.0, 15.0),
                    b(200.0, 180.0, 20.0, 10.0, 20.0),
                    b(300.0, 300.0, 12.0, 18.0, 12.0),
                    b(120.0, 280.0, 10.0, 25.0, 18.0),
                    b(280.0, 90.0, 25.0, 12.0, 10.0),
                    b(220.0, 320.0, 10.0, 10.0, 15.0),
                ],
                targets: vec![
                    t(160.0, 140.0, 10.0),
                    t(250.0, 250.0, 12.0),
                    t(80.0, 200.0, 10.0),
                    t(330.0, 200.0, 10.0),
                    t(60.0, 360.0, 8.0),
                ],
            },
            flock_params: FlockParams::default(),
            start: None,
            goal: None,
            n_robots: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cell_size: f64,
    pub thresholds: SituationThresholds,
    /// Waypoints closer than this to the centroid are considered passed.
    pub lookahead: f64,
    /// Minimum start-to-goal distance when they are drawn from the seed.
    pub min_route_length: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { cell_size: DEFAULT_CELL_SIZE, thresholds: SituationThresholds::default(), lookahead: 20.0, min_route_length: 200.0 }
    }
}

/// What the preference model sees at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub context: SituationContext<T>,
    /// Normalized measured motion status `R`.
    pub status: PreferenceVector<T>,
    pub features: FeatureVector<T>,
}

#[derive(Debug, Clone)]
pub struct Simulation<T> {
    pub scenario: Scenario<T>,
    pub cfg: SimConfig,
    pub robots: Vec<RobotState<T>>,
    pub path: Path<T>,
    pub goal: Vec2<T>,
    waypoint_idx: usize,
    grid: GridMap<T>,
    grid_inflation: T,
    pub step_count: u64,
}

impl<T: Scalar> Simulation<T> {
    /// Place the flock and plan a route. Start and goal come from the scenario
    /// when given, otherwise they are drawn from free cells using `seed`.
    pub fn new(scenario: &Scenario<T>, cfg: SimConfig, initial_pref: &PreferenceVector<T>, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let mut rng = seed::rng(seed, &[0x5171]);
        let inflation = denormalize(initial_pref).safety + c(ROBOT_RADIUS);
        let grid = build_grid(&scenario.arena, inflation, c(cfg.cell_size));
        let free_point = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec2<T>> {
            for _ in 0..10_000 {
                let row = rng.gen_range(0..grid.rows);
                let col = rng.gen_range(0..grid.cols);
                let cell = crate::planner::Cell { row, col };
                let p = grid.cell_center(cell);
                let margin: T = c(cfg.thresholds.obstacle.min(10.0));
                let inside = p.x >= margin && p.y >= margin && p.x <= scenario.arena.width - margin && p.y <= scenario.arena.depth - margin;
                if inside && !grid.is_blocked(cell) {
                    return Ok(p);
                }
            }
            Err(Error::InvalidArena("no free cell for start/goal".into()))
        };
        let start = match scenario.start {
            Some(s) => s,
            None => free_point(&mut rng)?,
        };
        let goal = match scenario.goal {
            Some(g) => g,
            None => {
                let mut g = free_point(&mut rng)?;
                for _ in 0..1000 {
                    if g.distance(start) >= c(cfg.min_route_length) {
                        break;
                    }
                    g = free_point(&mut rng)?;
                }
                g
            }
        };
        let path = plan(&grid, start, goal)?;

        let n = scenario.n_robots;
        let jitter: T = c(0.5);
        let robots = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                let dx: T = c(2.5 * a.cos() + rng.gen_range(-0.5..0.5));
                let dy: T = c(2.5 * a.sin() + rng.gen_range(-0.5..0.5));
                let z: T = c::<T>(10.0) + jitter * c::<T>(rng.gen_range(-1.0..1.0));
                RobotState::at(scenario.arena.clamp_position(Vec3::new(start.x + dx, start.y + dy, z)))
            })
            .collect();

        Ok(Self { scenario: scenario.clone(), cfg, robots, path, goal, waypoint_idx: 0, grid, grid_inflation: inflation, step_count: 0 })
    }

    pub fn arena(&self) -> &Arena<T> {
        &self.scenario.arena
    }

    pub fn observe(&self) -> Result<Observation<T>> {
        let context = classify_situation(centroid(&self.robots), self.arena(), &self.cfg.thresholds);
        let status = normalize(&measure_motion_status(&self.robots, self.arena())?);
        let features = FeatureVector::new(&status, &context, &self.cfg.thresholds);
        Ok(Observation { context, status, features })
    }

    pub fn current_waypoint(&self, pref: &PreferenceVector<T>) -> Vec3<T> {
        self.path.waypoints[self.waypoint_idx].with_z(denormalize(pref).height)
    }

    /// Replan when the inflation implied by the preferred safety distance has
    /// moved by more than one grid cell.
    fn maybe_replan(&mut self, pref: &PreferenceVector<T>) {
        let wanted = denormalize(pref).safety + c(ROBOT_RADIUS);
        if (wanted - self.grid_inflation).abs() <= c(self.cfg.cell_size) {
            return;
        }
        let grid = build_grid(self.arena(), wanted, c(self.cfg.cell_size));
        if let Ok(path) = plan(&grid, centroid(&self.robots).xy(), self.goal) {
            self.grid = grid;
            self.grid_inflation = wanted;
            self.path = path;
            self.waypoint_idx = 0;
        }
    }

    /// One control period under preference `pref`.
    pub fn advance(&mut self, pref: &PreferenceVector<T>) {
        self.maybe_replan(pref);
        let center = centroid(&self.robots).xy();
        let last = self.path.waypoints.len() - 1;
        while self.waypoint_idx < last && self.path.waypoints[self.waypoint_idx].distance(center) < c(self.cfg.lookahead) {
            self.waypoint_idx += 1;
        }
        let waypoint = self.current_waypoint(pref);
        self.robots = flocking::step(&self.robots, waypoint, pref, self.arena(), &self.scenario.flock_params);
        self.step_count += 1;
    }

    pub fn grid(&self) -> &GridMap<T> {
        &self.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disaster_site_is_valid() {
        Scenario::<f64>::disaster_site().validate().unwrap();
    }

    #[test]
    fn scenario_json_flattens_arena() {
        let json = r#"{"width":100,"depth":100,"max_altitude":40,"obstacles":[],"targets":[],
                       "flock_params":{"gain_rep":1.0},"start":[10,10],"goal":[90,90]}"#;
        let s: Scenario<f64> = serde_json::from_str(json).unwrap();
        assert_eq!(s.flock_params.gain_rep, 1.0);
        assert_eq!(s.flock_params.gain_att, 0.15);
        assert_eq!(s.n_robots, 5);
        assert_eq!(s.start, Some(Vec2::new(10.0, 10.0)));
        s.validate().unwrap();
    }

    #[test]
    fn flock_makes_progress_along_route() {
        let s = Scenario::<f64>::disaster_site();
        let pref = PreferenceVector::splat(0.5);
        let mut sim = Simulation::new(&s, SimConfig::default(), &pref, 3).unwrap();
        let start = centroid(&sim.robots).xy();
        let d0 = start.distance(sim.goal);
        for _ in 0..200 {
            sim.advance(&pref);
        }
        let d1 = centroid(&sim.robots).xy().distance(sim.goal);
        assert!(d1 < d0 - 50.0, "{d0} -> {d1}");
        assert_eq!(sim.step_count, 200);
    }

    #[test]
    fn same_seed_same_world() {
        let s = Scenario::<f64>::disaster_site();
        let pref = PreferenceVector::splat(0.4);
        let a = Simulation::new(&s, SimConfig::default(), &pref, 9).unwrap();
        let b = Simulation::new(&s, SimConfig::default(), &pref, 9).unwrap();
        assert_eq!(a.robots, b.robots);
        assert_eq!(a.goal, b.goal);
    }
}
