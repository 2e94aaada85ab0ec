//! Element precision handling.
//!
//! Every matrix in this crate is either IEEE-754 binary32 or binary64; one
//! operation never mixes the two. The [`Scalar`] trait carries the handful
//! of bit-level services the kernels, the file format and the harness need
//! beyond plain arithmetic.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Element precision of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    /// IEEE-754 binary32 (`f32`).
    Single,
    /// IEEE-754 binary64 (`f64`).
    Double,
}

impl Precision {
    /// Code used in the file header (0 = binary32, 1 = binary64).
    pub fn code(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }

    /// Size of one element in bytes.
    pub fn elem_bytes(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Floating-point element type: `f32` or `f64`.
///
/// Sealed in practice (only the two impls below make sense); kept public so
/// callers can write generic drivers.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const PRECISION: Precision;
    /// Machine epsilon (distance from 1.0 to the next representable value).
    const EPSILON: Self;

    fn zero() -> Self;
    fn one() -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_nan(self) -> bool;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Map a full-entropy `u64` to uniform [0, 1) using the top mantissa-many
    /// bits (53 for `f64`, 24 for `f32`).
    fn unit_from_u64(bits: u64) -> Self;

    /// Raw bit pattern widened to 64 bits (used for bitwise comparisons).
    fn to_bits_u64(self) -> u64;

    /// Number of representable values strictly between `self` and `other`
    /// plus one if they differ; 0 when bitwise equal (treating -0 == +0).
    fn ulp_diff(self, other: Self) -> u64;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// CSV rendering with enough significant digits to round-trip
    /// (17 for `f64`, 9 for `f32`).
    fn fmt_csv(self) -> String;
}

// Monotone remap of the IEEE bit pattern so that ulp distance is a plain
// integer difference; -0.0 and +0.0 both map to 0.
fn ordered_bits64(x: f64) -> i64 {
    let b = x.to_bits() as i64;
    if b < 0 {
        i64::MIN - b
    } else {
        b
    }
}

fn ordered_bits32(x: f32) -> i32 {
    let b = x.to_bits() as i32;
    if b < 0 {
        i32::MIN - b
    } else {
        b
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const EPSILON: f64 = f64::EPSILON;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn is_nan(self) -> bool {
        f64::is_nan(self)
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }

    fn unit_from_u64(bits: u64) -> Self {
        // 53 mantissa bits scaled by 2^-53.
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }

    fn ulp_diff(self, other: Self) -> u64 {
        (ordered_bits64(self) as i128 - ordered_bits64(other) as i128).unsigned_abs() as u64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte element"))
    }

    fn fmt_csv(self) -> String {
        format!("{self:.16e}")
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const EPSILON: f32 = f32::EPSILON;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn is_nan(self) -> bool {
        f32::is_nan(self)
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn unit_from_u64(bits: u64) -> Self {
        // 24 mantissa bits scaled by 2^-24.
        (bits >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }

    fn ulp_diff(self, other: Self) -> u64 {
        (ordered_bits32(self) as i64 - ordered_bits32(other) as i64).unsigned_abs()
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte element"))
    }

    fn fmt_csv(self) -> String {
        format!("{self:.8e}")
    }
}
