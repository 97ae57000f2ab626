use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

/// Floating-point precision of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FloatMode {
    #[default]
    F32,
    F64,
}

impl FloatMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FloatMode::F32 => "f32",
            FloatMode::F64 => "f64",
        }
    }
}

impl std::str::FromStr for FloatMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(FloatMode::F32),
            "f64" => Ok(FloatMode::F64),
            other => Err(format!("unknown float mode {other:?} (expected f32 or f64)")),
        }
    }
}

/// Scalar type the tensor engine runs on.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const MODE: FloatMode;
    const BYTES: usize;

    fn from_f64_lossy(x: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes.len()` must equal `Self::BYTES`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const MODE: FloatMode = FloatMode::F32;
    const BYTES: usize = 4;

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const MODE: FloatMode = FloatMode::F64;
    const BYTES: usize = 8;

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
