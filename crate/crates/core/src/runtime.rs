//! Online deployment: predict a preference, fly the flock with it, collect
//! instructions, fine-tune on the resulting labels, and measure intervention
//! phases.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Algo;
use crate::error::{Error, Result};
use crate::instruction::Instruction;
use crate::meta::DEFAULT_INNER_LR;
use crate::net::{loss, sgd_step, FeatureVector, LabeledSample, ModelParams};
use crate::oracle::{instruct, PreferenceType, UserProfile};
use crate::scalar::{c, Scalar};
use crate::sim::{Scenario, SimConfig, Simulation};
use crate::world::{PreferenceVector, Situation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub online_lr: f64,
    /// Most recent labeled samples used per online update.
    pub window: usize,
    /// Label offset per unit of instruction.
    pub label_step: f64,
    /// Consecutive satisfied steps that end an episode.
    pub convergence_steps: usize,
    /// Satisfied gaps of at most this many steps do not split a phase.
    pub phase_gap: usize,
    pub step_cap: usize,
    pub sim: SimConfig,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            online_lr: DEFAULT_INNER_LR,
            window: 4,
            label_step: 0.1,
            convergence_steps: 10,
            phase_gap: 3,
            step_cap: 600,
            sim: SimConfig::default(),
        }
    }
}

/// Live model plus its buffer of instruction-derived labels.
#[derive(Debug, Clone)]
pub struct OnlineLearner<T> {
    pub params: ModelParams<T>,
    pub buffer: Vec<LabeledSample<T>>,
    pub online_lr: f64,
    pub window: usize,
    pub label_step: f64,
}

impl<T: Scalar> OnlineLearner<T> {
    pub fn new(params: ModelParams<T>, cfg: &RuntimeConfig) -> Self {
        Self { params, buffer: Vec::new(), online_lr: cfg.online_lr, window: cfg.window, label_step: cfg.label_step }
    }

    pub fn predict(&self, features: &FeatureVector<T>) -> Result<PreferenceVector<T>> {
        self.params.forward(features)
    }

    /// Label `predicted + step * ins`, buffer it, and take one SGD step on the
    /// buffer tail. A zero instruction changes nothing. Returns whether the
    /// model was updated.
    pub fn apply(&mut self, features: &FeatureVector<T>, predicted: &PreferenceVector<T>, ins: Instruction) -> Result<bool> {
        if ins.is_zero() {
            return Ok(false);
        }
        let label = ins.label(predicted, self.label_step);
        self.buffer.push(LabeledSample { input: *features, label });
        let tail = &self.buffer[self.buffer.len().saturating_sub(self.window.max(1))..];
        self.params = sgd_step(&self.params, tail, c(self.online_lr))?;
        Ok(true)
    }
}

/// A maximal run of intervention steps, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionPhase {
    pub start_step: usize,
    pub end_step: usize,
    pub instruction_count: usize,
}

impl InterventionPhase {
    pub fn duration(&self) -> usize {
        self.end_step - self.start_step + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceRow<T> {
    pub step: usize,
    pub situation: Situation,
    pub h_hat: PreferenceVector<T>,
    pub r: PreferenceVector<T>,
    pub ins: Instruction,
}

/// Group nonzero-instruction steps into phases; runs separated by at most
/// `gap` satisfied steps merge.
pub fn detect_phases(active: impl IntoIterator<Item = (usize, bool)>, gap: usize) -> Vec<InterventionPhase> {
    let mut phases: Vec<InterventionPhase> = Vec::new();
    for (step, on) in active {
        if !on {
            continue;
        }
        match phases.last_mut() {
            Some(p) if step - p.end_step - 1 <= gap => {
                p.end_step = step;
                p.instruction_count += 1;
            }
            _ => phases.push(InterventionPhase { start_step: step, end_step: step, instruction_count: 1 }),
        }
    }
    phases
}

pub fn detect_phases_in_trace<T: Scalar>(trace: &[TraceRow<T>], gap: usize) -> Vec<InterventionPhase> {
    detect_phases(trace.iter().map(|r| (r.step, !r.ins.is_zero())), gap)
}

/// Incremental phase tracking for live sessions; agrees with `detect_phases`.
#[derive(Debug, Clone, Default)]
pub struct PhaseTracker {
    pub gap: usize,
    pub phases: Vec<InterventionPhase>,
    last_step: Option<usize>,
}

impl PhaseTracker {
    pub fn new(gap: usize) -> Self {
        Self { gap, phases: Vec::new(), last_step: None }
    }

    pub fn record(&mut self, step: usize, active: bool) {
        self.last_step = Some(step);
        if !active {
            return;
        }
        match self.phases.last_mut() {
            Some(p) if step - p.end_step - 1 <= self.gap => {
                p.end_step = step;
                p.instruction_count += 1;
            }
            _ => self.phases.push(InterventionPhase { start_step: step, end_step: step, instruction_count: 1 }),
        }
    }

    /// Whether the latest phase may still be extended.
    pub fn phase_active(&self) -> bool {
        match (self.phases.last(), self.last_step) {
            (Some(p), Some(now)) => now - p.end_step <= self.gap,
            _ => false,
        }
    }

    pub fn current_phase_len(&self) -> usize {
        if self.phase_active() {
            self.phases.last().map_or(0, |p| p.duration())
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct EpisodeReport<T> {
    pub user_id: u64,
    pub ptype: PreferenceType,
    pub phases: Vec<InterventionPhase>,
    pub total_steps: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub trace: Vec<TraceRow<T>>,
}

impl<T: Scalar> EpisodeReport<T> {
    pub fn total_intervention_steps(&self) -> usize {
        self.phases.iter().map(|p| p.instruction_count).sum()
    }

    pub fn mean_phase_duration(&self) -> f64 {
        if self.phases.is_empty() {
            0.0
        } else {
            self.phases.iter().map(|p| p.duration()).sum::<usize>() as f64 / self.phases.len() as f64
        }
    }

    pub fn write_trace(&self, mut out: impl Write) -> Result<()> {
        for row in &self.trace {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Deploy `model` for one simulated user. The user critiques the commanded
/// preference; nonzero instructions become labels and trigger one online step.
pub fn run_episode<T: Scalar>(
    model: &ModelParams<T>,
    user: &UserProfile<T>,
    scenario: &Scenario<T>,
    cfg: &RuntimeConfig,
    seed: u64,
) -> Result<(ModelParams<T>, EpisodeReport<T>)> {
    let mut learner = OnlineLearner::new(model.clone(), cfg);
    let initial = learner.predict(&FeatureVector([T::zero(); crate::net::FEATURE_DIM]))?;
    let mut sim = Simulation::new(scenario, cfg.sim, &initial, seed)?;
    let mut obs = sim.observe()?;

    let mut trace = Vec::new();
    let mut streak = 0;
    let mut converged = false;
    let mut final_loss = 0.0;

    for step in 0..cfg.step_cap {
        let situation = obs.context.situation();
        let h_hat = learner.predict(&obs.features)?;
        sim.advance(&h_hat);
        let next = sim.observe()?;
        let ins = instruct(user, situation, &h_hat);
        learner.apply(&obs.features, &h_hat, ins)?;
        final_loss = loss(&h_hat, user.target(situation)).as_f64();
        trace.push(TraceRow { step, situation, h_hat, r: next.status, ins });
        streak = if ins.is_zero() { streak + 1 } else { 0 };
        obs = next;
        if streak >= cfg.convergence_steps {
            converged = true;
            break;
        }
    }

    let phases = detect_phases_in_trace(&trace, cfg.phase_gap);
    let report = EpisodeReport {
        user_id: user.id,
        ptype: user.ptype,
        phases,
        total_steps: trace.len(),
        converged,
        final_loss,
        trace,
    };
    Ok((learner.params, report))
}

/// One CSV row per (user, seed) episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub user_id: u64,
    pub ptype: PreferenceType,
    pub seed: u64,
    pub algo: Algo,
    pub n_phases: usize,
    pub mean_phase_duration: f64,
    pub total_intervention_steps: usize,
    pub converged: bool,
    pub final_loss: f64,
}

impl MetricsRow {
    pub fn from_report<T: Scalar>(report: &EpisodeReport<T>, seed: u64, algo: Algo) -> Self {
        Self {
            user_id: report.user_id,
            ptype: report.ptype,
            seed,
            algo,
            n_phases: report.phases.len(),
            mean_phase_duration: report.mean_phase_duration(),
            total_intervention_steps: report.total_intervention_steps(),
            converged: report.converged,
            final_loss: report.final_loss,
        }
    }
}

/// Every (user, seed) episode starts from the same checkpoint parameters.
/// Rows come back in user-major, seed-minor order.
pub fn evaluate_suite<T: Scalar>(
    model: &ModelParams<T>,
    algo: Algo,
    users: &[UserProfile<T>],
    scenario: &Scenario<T>,
    cfg: &RuntimeConfig,
    seeds: &[u64],
) -> Result<Vec<MetricsRow>> {
    if users.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let jobs: Vec<(&UserProfile<T>, u64)> = users.iter().flat_map(|u| seeds.iter().map(move |s| (u, *s))).collect();
    jobs.par_iter()
        .map(|(user, seed)| {
            let (_, report) = run_episode(model, user, scenario, cfg, *seed)?;
            Ok(MetricsRow::from_report(&report, *seed, algo))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algo: Algo,
    /// `None` aggregates every type.
    pub ptype: Option<PreferenceType>,
    pub episodes: usize,
    /// Pooled over all phases.
    pub mean_phase_duration: f64,
    pub std_phase_duration: f64,
    pub mean_phases: f64,
    pub std_phases: f64,
    pub converged_fraction: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pooled phase duration: total phase steps over total phases.
pub fn pooled_phase_duration(rows: &[&MetricsRow]) -> f64 {
    let phases: usize = rows.iter().map(|r| r.n_phases).sum();
    if phases == 0 {
        return 0.0;
    }
    rows.iter().map(|r| r.mean_phase_duration * r.n_phases as f64).sum::<f64>() / phases as f64
}

fn summarize_group(algo: Algo, ptype: Option<PreferenceType>, rows: &[&MetricsRow]) -> Summary {
    // Per-phase durations are not in the rows, so the spread is over episode means.
    let durations: Vec<f64> = rows.iter().filter(|r| r.n_phases > 0).map(|r| r.mean_phase_duration).collect();
    let counts: Vec<f64> = rows.iter().map(|r| r.n_phases as f64).collect();
    let (mean_phases, std_phases) = mean_std(&counts);
    Summary {
        algo,
        ptype,
        episodes: rows.len(),
        mean_phase_duration: pooled_phase_duration(rows),
        std_phase_duration: mean_std(&durations).1,
        mean_phases,
        std_phases,
        converged_fraction: rows.iter().filter(|r| r.converged).count() as f64 / rows.len().max(1) as f64,
    }
}

/// Per algorithm: one overall row followed by one row per preference type.
pub fn summarize(rows: &[MetricsRow]) -> Vec<Summary> {
    let mut by_algo: BTreeMap<&str, (Algo, Vec<&MetricsRow>)> = BTreeMap::new();
    for r in rows {
        by_algo.entry(r.algo.name()).or_insert((r.algo, Vec::new())).1.push(r);
    }
    let mut out = Vec::new();
    for (_, (algo, group)) in by_algo {
        out.push(summarize_group(algo, None, &group));
        for t in PreferenceType::ALL {
            let sub: Vec<&MetricsRow> = group.iter().copied().filter(|r| r.ptype == t).collect();
            if !sub.is_empty() {
                out.push(summarize_group(algo, Some(t), &sub));
            }
        }
    }
    out
}

pub fn write_metrics(rows: &[MetricsRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(input: impl std::io::Read) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}
