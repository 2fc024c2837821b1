//! One live steering session: a world, an evolving model and a phase tracker.
//! Everything here is synchronous; the transport drives it from a single task.

use mpl_core::net::{FeatureVector, FEATURE_DIM};
use mpl_core::runtime::{OnlineLearner, PhaseTracker, RuntimeConfig};
use mpl_core::sim::{Observation, Simulation};
use mpl_core::{Checkpoint, Instruction, PreferenceVector, Result, Scenario};

use crate::protocol::{ClientMessage, Envelope, PhaseMetrics, RobotView, ServerMessage, SCHEMA_VERSION};

pub struct Session {
    pub id: String,
    checkpoint: Checkpoint,
    scenario: Scenario,
    cfg: RuntimeConfig,
    seed: u64,
    learner: OnlineLearner<f64>,
    sim: Simulation<f64>,
    obs: Observation<f64>,
    tracker: PhaseTracker,
    step: u64,
    paused: bool,
    /// A nonzero instruction arrived since the last simulation step.
    instructed: bool,
}

impl Session {
    pub fn open(id: String, checkpoint: Checkpoint, scenario: Scenario, cfg: RuntimeConfig, seed: u64) -> Result<Self> {
        let (learner, sim, obs) = fresh_world(&checkpoint, &scenario, &cfg, seed)?;
        Ok(Self {
            id,
            checkpoint,
            scenario,
            tracker: PhaseTracker::new(cfg.phase_gap),
            cfg,
            seed,
            learner,
            sim,
            obs,
            step: 0,
            paused: false,
            instructed: false,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn params(&self) -> &mpl_core::ModelParams {
        &self.learner.params
    }

    pub fn wrap(&self, body: ServerMessage) -> Envelope {
        Envelope { schema_version: SCHEMA_VERSION.into(), session_id: self.id.clone(), body }
    }

    fn h_hat(&self) -> PreferenceVector {
        self.learner.predict(&self.obs.features).expect("checkpoint shape validated on load")
    }

    pub fn arena_message(&self) -> Envelope {
        let a = self.sim.arena();
        self.wrap(ServerMessage::Arena {
            width: a.width,
            depth: a.depth,
            max_altitude: a.max_altitude,
            obstacles: a.obstacles.clone(),
            targets: a.targets.clone(),
            route: self.sim.path.waypoints.iter().map(|w| [w.x, w.y]).collect(),
            algo: self.checkpoint.trained_with,
        })
    }

    pub fn frame(&self) -> Envelope {
        self.wrap(ServerMessage::Frame {
            step: self.step,
            algo: self.checkpoint.trained_with,
            robots: self.sim.robots.iter().map(|r| RobotView { p: r.position, v: r.velocity }).collect(),
            h_hat: self.h_hat(),
            r: self.obs.status,
            situation: self.obs.context.situation(),
            phase_active: self.tracker.phase_active(),
            paused: self.paused,
            metrics: PhaseMetrics { n_phases: self.tracker.phases.len(), current_phase_len: self.tracker.current_phase_len() },
        })
    }

    /// Advance the world by one dt under the current prediction. No-op while paused.
    pub fn tick(&mut self) -> Result<bool> {
        if self.paused {
            return Ok(false);
        }
        let h = self.h_hat();
        self.sim.advance(&h);
        self.obs = self.sim.observe()?;
        self.tracker.record(self.step as usize, self.instructed);
        self.instructed = false;
        self.step += 1;
        Ok(true)
    }

    /// Same update rule as the headless runtime, with the human as the oracle.
    pub fn apply_instruction(&mut self, ins: Instruction) -> Result<Envelope> {
        let h = self.h_hat();
        let updated = self.learner.apply(&self.obs.features, &h, ins)?;
        self.instructed |= updated;
        Ok(self.ack("instruction", updated))
    }

    pub fn reset(&mut self) -> Result<()> {
        let (learner, sim, obs) = fresh_world(&self.checkpoint, &self.scenario, &self.cfg, self.seed)?;
        self.learner = learner;
        self.sim = sim;
        self.obs = obs;
        self.tracker = PhaseTracker::new(self.cfg.phase_gap);
        self.step = 0;
        self.instructed = false;
        Ok(())
    }

    fn ack(&self, command: &str, updated: bool) -> Envelope {
        self.wrap(ServerMessage::Ack { command: command.into(), step: self.step, h_hat: self.h_hat(), updated })
    }

    fn error(&self, message: impl Into<String>) -> Envelope {
        self.wrap(ServerMessage::Error { message: message.into() })
    }

    /// Handle one client text message. Replies are returned in send order.
    pub fn handle_text(&mut self, text: &str) -> Vec<Envelope> {
        let msg = match ClientMessage::parse(text) {
            Ok(m) => m,
            Err(e) => return vec![self.error(e)],
        };
        let result = match msg {
            ClientMessage::Instruction { ins } => self.apply_instruction(ins).map(|a| vec![a]),
            ClientMessage::Pause => {
                self.paused = true;
                Ok(vec![self.ack("pause", false)])
            }
            ClientMessage::Resume => {
                self.paused = false;
                Ok(vec![self.ack("resume", false)])
            }
            ClientMessage::Reset => self.reset().map(|_| vec![self.ack("reset", false), self.arena_message(), self.frame()]),
        };
        result.unwrap_or_else(|e| vec![self.error(e.to_string())])
    }
}

fn fresh_world(
    checkpoint: &Checkpoint,
    scenario: &Scenario,
    cfg: &RuntimeConfig,
    seed: u64,
) -> Result<(OnlineLearner<f64>, Simulation<f64>, Observation<f64>)> {
    let params = checkpoint.params();
    params.validate()?;
    let learner = OnlineLearner::new(params, cfg);
    let initial = learner.predict(&FeatureVector([0.0; FEATURE_DIM]))?;
    let sim = Simulation::new(scenario, cfg.sim, &initial, seed)?;
    let obs = sim.observe()?;
    Ok((learner, sim, obs))
}
