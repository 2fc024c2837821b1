//! Simulated users: preference populations and ternary instructions.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::Instruction;
use crate::scalar::{c, Scalar};
use crate::seed;
use crate::world::{Behavior, PreferenceVector, Situation};

/// Half-width of the zone in which a user issues no correction.
pub const DEAD_BAND: f64 = 0.1;

/// Absorbs representation error so that e.g. `0.3` vs `0.4` counts as inside the band.
const DEAD_BAND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceType {
    Aggressive,
    Medium,
    Reserved,
}

impl PreferenceType {
    pub const ALL: [PreferenceType; 3] = [PreferenceType::Aggressive, PreferenceType::Medium, PreferenceType::Reserved];

    pub fn name(self) -> &'static str {
        match self {
            PreferenceType::Aggressive => "aggressive",
            PreferenceType::Medium => "medium",
            PreferenceType::Reserved => "reserved",
        }
    }
}

impl fmt::Display for PreferenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreferenceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PreferenceType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preference type '{s}'")))
    }
}

/// One value per situation, serialized with the FF/TF/FT/TT keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSituation<V> {
    #[serde(rename = "FF")]
    pub ff: V,
    #[serde(rename = "TF")]
    pub tf: V,
    #[serde(rename = "FT")]
    pub ft: V,
    #[serde(rename = "TT")]
    pub tt: V,
}

impl<V> PerSituation<V> {
    pub fn from_fn(mut f: impl FnMut(Situation) -> V) -> Self {
        Self { ff: f(Situation::FF), tf: f(Situation::TF), ft: f(Situation::FT), tt: f(Situation::TT) }
    }

    pub fn get(&self, s: Situation) -> &V {
        match s {
            Situation::FF => &self.ff,
            Situation::TF => &self.tf,
            Situation::FT => &self.ft,
            Situation::TT => &self.tt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct UserProfile<T> {
    pub id: u64,
    pub ptype: PreferenceType,
    pub targets: PerSituation<PreferenceVector<T>>,
}

impl<T: Scalar> UserProfile<T> {
    pub fn target(&self, s: Situation) -> &PreferenceVector<T> {
        self.targets.get(s)
    }

    pub fn validate(&self) -> Result<()> {
        if Situation::ALL.iter().all(|s| self.target(*s).is_normalized()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("user {} has a target outside [0, 1]", self.id)))
        }
    }
}

/// Closed interval inside `[0, 1]`, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn shifted(self, delta: f64) -> Self {
        Self::new((self.lo + delta).clamp(0.0, 1.0), (self.hi + delta).clamp(0.0, 1.0))
    }
}

impl From<[f64; 2]> for Band {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Band> for [f64; 2] {
    fn from(b: Band) -> Self {
        [b.lo, b.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorBands {
    pub inner: Band,
    pub height: Band,
    pub speed: Band,
    pub safety: Band,
}

impl BehaviorBands {
    pub fn get(&self, b: Behavior) -> Band {
        match b {
            Behavior::Inner => self.inner,
            Behavior::Height => self.height,
            Behavior::Speed => self.speed,
            Behavior::Safety => self.safety,
        }
    }

    /// Apply the near-target / near-obstacle modifiers to far-from-everything bands.
    fn for_situation(self, s: Situation) -> Self {
        let mut out = self;
        if s.near_target() {
            out.height = out.height.shifted(-0.2);
            out.speed = out.speed.shifted(-0.2);
        }
        if s.near_obstacle() {
            out.safety = out.safety.shifted(0.2);
            out.speed = out.speed.shifted(-0.1);
        }
        out
    }
}

/// Per type, per situation, per behavior sampling interval for target preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeBands {
    pub aggressive: PerSituation<BehaviorBands>,
    pub medium: PerSituation<BehaviorBands>,
    pub reserved: PerSituation<BehaviorBands>,
}

impl Default for TypeBands {
    fn default() -> Self {
        let aggressive = BehaviorBands {
            inner: Band::new(0.7, 1.0),
            height: Band::new(0.7, 0.9),
            speed: Band::new(0.8, 1.0),
            safety: Band::new(0.0, 0.3),
        };
        let medium = BehaviorBands {
            inner: Band::new(0.4, 0.6),
            height: Band::new(0.4, 0.6),
            speed: Band::new(0.4, 0.6),
            safety: Band::new(0.4, 0.6),
        };
        let reserved = BehaviorBands {
            inner: Band::new(0.0, 0.3),
            height: Band::new(0.1, 0.3),
            speed: Band::new(0.0, 0.3),
            safety: Band::new(0.7, 1.0),
        };
        Self {
            aggressive: PerSituation::from_fn(|s| aggressive.for_situation(s)),
            medium: PerSituation::from_fn(|s| medium.for_situation(s)),
            reserved: PerSituation::from_fn(|s| reserved.for_situation(s)),
        }
    }
}

impl TypeBands {
    pub fn for_type(&self, t: PreferenceType) -> &PerSituation<BehaviorBands> {
        match t {
            PreferenceType::Aggressive => &self.aggressive,
            PreferenceType::Medium => &self.medium,
            PreferenceType::Reserved => &self.reserved,
        }
    }

    pub fn band(&self, t: PreferenceType, s: Situation, b: Behavior) -> Band {
        self.for_type(t).get(s).get(b)
    }

    pub fn validate(&self) -> Result<()> {
        for t in PreferenceType::ALL {
            for s in Situation::ALL {
                for b in Behavior::ALL {
                    let band = self.band(t, s, b);
                    if !(0.0 <= band.lo && band.lo <= band.hi && band.hi <= 1.0) {
                        return Err(Error::InvalidConfig(format!("band {t}/{s}/{} is not inside [0, 1] with lo <= hi", b.name())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bands: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        bands.validate()?;
        Ok(bands)
    }
}

/// Round-robin types (aggressive, medium, reserved, ...) with every target
/// component drawn uniformly from its band.
pub fn generate_population<T: Scalar>(n: usize, bands: &TypeBands, seed: u64) -> Vec<UserProfile<T>> {
    let mut rng = seed::rng(seed, &[0x0505]);
    (0..n)
        .map(|i| {
            let ptype = PreferenceType::ALL[i % 3];
            let targets = PerSituation::from_fn(|s| {
                PreferenceVector::from_array(std::array::from_fn(|k| {
                    let band = bands.band(ptype, s, Behavior::ALL[k]);
                    let u: f64 = rng.gen();
                    c::<T>(band.lo + u * (band.hi - band.lo))
                }))
            });
            UserProfile { id: i as u64, ptype, targets }
        })
        .collect()
}

/// Ternary correction of `observed` against the user's target for `situation`.
pub fn instruct<T: Scalar>(user: &UserProfile<T>, situation: Situation, observed: &PreferenceVector<T>) -> Instruction {
    instruct_against(user.target(situation), observed)
}

pub fn instruct_against<T: Scalar>(target: &PreferenceVector<T>, observed: &PreferenceVector<T>) -> Instruction {
    let band: T = c(DEAD_BAND + DEAD_BAND_SLACK);
    let (h, r) = (target.to_array(), observed.to_array());
    let dirs: [i64; 4] = std::array::from_fn(|k| {
        let d = h[k] - r[k];
        if d.abs() <= band {
            0
        } else if d > T::zero() {
            1
        } else {
            -1
        }
    });
    Instruction::from_array(dirs).expect("ternary by construction")
}

pub fn is_satisfied<T: Scalar>(user: &UserProfile<T>, situation: Situation, observed: &PreferenceVector<T>) -> bool {
    instruct(user, situation, observed).is_zero()
}

pub fn write_population<T: Scalar>(users: &[UserProfile<T>], mut out: impl Write) -> Result<()> {
    for u in users {
        serde_json::to_writer(&mut out, u)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_population<T: Scalar>(input: impl BufRead) -> Result<Vec<UserProfile<T>>> {
    let mut users = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u: UserProfile<T> = serde_json::from_str(&line)?;
        u.validate()?;
        users.push(u);
    }
    Ok(users)
}

pub fn save_population<T: Scalar>(users: &[UserProfile<T>], path: impl AsRef<Path>) -> Result<()> {
    write_population(users, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_population<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<UserProfile<T>>> {
    read_population(std::io::BufReader::new(std::fs::File::open(path)?))
}
