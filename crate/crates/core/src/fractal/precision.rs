//! Floating point formats the kernels can run in.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use half::f16;

/// Arithmetic precision of a render.
///
/// `Half` is emulated in software: operands are stored as binary16 and every
/// add, subtract and multiply is rounded back to binary16 (round to nearest,
/// ties to even). The hardware result is computed in binary32 first, which has
/// enough precision (24 >= 2 * 11 + 2 bits) for the second rounding to be exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Half,
    Single,
    Double,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::Half, Precision::Single, Precision::Double];

    pub fn name(self) -> &'static str {
        match self {
            Precision::Half => "half",
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    /// One-letter tag used in result tables.
    pub fn letter(self) -> char {
        match self {
            Precision::Half => 'h',
            Precision::Single => 's',
            Precision::Double => 'd',
        }
    }

    /// Storage size of one value in bytes.
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Half => 2,
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    /// Rounds `v` into this precision and back to `f64`.
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            Precision::Half => f16::from_f64(v).to_f64(),
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }

    /// Appends `v`, rounded to this precision, as little-endian bytes.
    pub fn encode_into(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Precision::Half => out.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
            Precision::Single => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::Double => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    /// Decodes a little-endian buffer written by [`Precision::encode_into`].
    pub fn decode(self, bytes: &[u8]) -> Vec<f64> {
        let w = self.byte_width();
        bytes
            .chunks_exact(w)
            .map(|b| match self {
                Precision::Half => f16::from_le_bytes([b[0], b[1]]).to_f64(),
                Precision::Single => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                Precision::Double => {
                    f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]])
                }
            })
            .collect()
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown precision `{0}` (expected half, single or double)")]
pub struct UnknownPrecision(pub String);

impl FromStr for Precision {
    type Err = UnknownPrecision;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "half" | "h" | "f16" => Ok(Precision::Half),
            "single" | "s" | "f32" => Ok(Precision::Single),
            "double" | "d" | "f64" => Ok(Precision::Double),
            _ => Err(UnknownPrecision(s.to_string())),
        }
    }
}

/// Scalar type a kernel is instantiated with.
///
/// Implementations must round every operation to the storage format; none of
/// them may fuse a multiply and an add.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + 'static
{
    const ZERO: Self;
    const TWO: Self;
    const FOUR: Self;
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const TWO: Self = 2.0;
    const FOUR: Self = 4.0;
    const PRECISION: Precision = Precision::Single;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const TWO: Self = 2.0;
    const FOUR: Self = 4.0;
    const PRECISION: Precision = Precision::Double;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

// `half::f16` arithmetic widens to f32, operates, and rounds back, which is
// exactly per-operation binary16 rounding.
impl Real for f16 {
    const ZERO: Self = f16::ZERO;
    const TWO: Self = f16::from_f32_const(2.0);
    const FOUR: Self = f16::from_f32_const(4.0);
    const PRECISION: Precision = Precision::Half;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        f16::from_f64(v)
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        f16::to_f64(self)
    }
}

/// Instantiates a generic body once per precision.
///
/// `dispatch_precision!(p, T => expr)` evaluates `expr` with `T` bound to the
/// scalar type that matches `p`.
#[macro_export]
macro_rules! dispatch_precision {
    ($p:expr, $t:ident => $body:expr) => {
        match $p {
            $crate::Precision::Half => {
                type $t = $crate::fractal::Half;
                $body
            }
            $crate::Precision::Single => {
                type $t = f32;
                $body
            }
            $crate::Precision::Double => {
                type $t = f64;
                $body
            }
        }
    };
}
