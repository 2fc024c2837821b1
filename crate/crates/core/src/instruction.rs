use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, clamp01, Scalar};
use crate::world::{Behavior, PreferenceVector};

/// Per-behavior ternary correction: +1 increase, 0 keep, -1 decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "RawInstruction")]
pub struct Instruction {
    pub inner: i8,
    pub height: i8,
    pub speed: i8,
    pub safety: i8,
}

#[derive(Deserialize)]
struct RawInstruction {
    inner: i64,
    height: i64,
    speed: i64,
    safety: i64,
}

impl TryFrom<RawInstruction> for Instruction {
    type Error = Error;

    fn try_from(r: RawInstruction) -> Result<Self> {
        Instruction::from_array([r.inner, r.height, r.speed, r.safety])
    }
}

impl Instruction {
    pub const ZERO: Instruction = Instruction { inner: 0, height: 0, speed: 0, safety: 0 };

    pub fn from_array(a: [i64; 4]) -> Result<Self> {
        if a.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::InvalidConfig("invalid instruction: components must be -1, 0 or 1".into()));
        }
        Ok(Self { inner: a[0] as i8, height: a[1] as i8, speed: a[2] as i8, safety: a[3] as i8 })
    }

    pub fn single(b: Behavior, dir: i8) -> Self {
        let mut a = [0i64; 4];
        a[b.index()] = dir.signum() as i64;
        Self::from_array(a).expect("signum is ternary")
    }

    pub fn to_array(self) -> [i8; 4] {
        [self.inner, self.height, self.speed, self.safety]
    }

    pub fn is_zero(self) -> bool {
        self == Self::ZERO
    }

    pub fn negated(self) -> Self {
        let a = self.to_array();
        Self { inner: -a[0], height: -a[1], speed: -a[2], safety: -a[3] }
    }

    /// Training label for an instruction: `predicted + step * ins`, clamped to `[0, 1]`.
    pub fn label<T: Scalar>(self, predicted: &PreferenceVector<T>, step: f64) -> PreferenceVector<T> {
        let a = self.to_array();
        predicted.map(|b, h| clamp01(h + c::<T>(step * a[b.index()] as f64)))
    }
}
