//! On-disk model checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, ModelParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// How a set of parameters was trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Maml,
    Reptile,
    Baseline,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Maml => "maml",
            Algo::Reptile => "reptile",
            Algo::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maml" => Ok(Algo::Maml),
            "reptile" => Ok(Algo::Reptile),
            "baseline" => Ok(Algo::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown algo '{other}' (expected maml, reptile or baseline)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub schema_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub theta: Vec<T>,
    pub trained_with: Algo,
    pub seed: u64,
    /// Caller-supplied timestamp. Left empty unless given so that repeated
    /// runs write identical bytes.
    #[serde(default)]
    pub created_at: Option<String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: &ModelParams<T>, trained_with: Algo, seed: u64, created_at: Option<String>) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            layer_dims: params.layer_dims.clone(),
            activations: params.activations.clone(),
            theta: params.theta.clone(),
            trained_with,
            seed,
            created_at,
        }
    }

    pub fn params(&self) -> ModelParams<T> {
        ModelParams {
            layer_dims: self.layer_dims.clone(),
            activations: self.activations.clone(),
            theta: self.theta.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint schema_version {}", ck.schema_version)));
        }
        ck.params().validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
