//! Wire messages. Every outgoing message is wrapped in an [`Envelope`] that
//! carries the schema version and the session id.

use mpl_core::geometry::Vec3;
use mpl_core::world::{Obstacle, TargetZone};
use mpl_core::{Algo, Instruction, PreferenceVector, Situation};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: String,
    pub session_id: String,
    #[serde(flatten)]
    pub body: ServerMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub p: Vec3<f64>,
    pub v: Vec3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub n_phases: usize,
    pub current_phase_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        step: u64,
        algo: Algo,
        robots: Vec<RobotView>,
        #[serde(rename = "H_hat")]
        h_hat: PreferenceVector,
        #[serde(rename = "R")]
        r: PreferenceVector,
        situation: Situation,
        phase_active: bool,
        paused: bool,
        metrics: PhaseMetrics,
    },
    Arena {
        width: f64,
        depth: f64,
        max_altitude: f64,
        obstacles: Vec<Obstacle<f64>>,
        targets: Vec<TargetZone<f64>>,
        /// Planned ground route, start to goal.
        route: Vec<[f64; 2]>,
        algo: Algo,
    },
    Ack {
        command: String,
        step: u64,
        #[serde(rename = "H_hat")]
        h_hat: PreferenceVector,
        updated: bool,
    },
    Error {
        message: String,
    },
    ServerShutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Instruction { ins: Instruction },
    Pause,
    Resume,
    Reset,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("invalid instruction") {
                msg
            } else {
                format!("malformed message: {msg}")
            }
        })
    }
}
