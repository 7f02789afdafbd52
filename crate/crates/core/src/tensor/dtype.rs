use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TensorError;

/// Element type of a [`Tensor`](super::Tensor).
///
/// The string form follows the model-zoo naming (`float32`, `uint8`, ...);
/// short aliases such as `f32` are accepted when parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    F32,
    F64,
}

impl DType {
    pub const ALL: [DType; 9] = [
        DType::I8,
        DType::U8,
        DType::I16,
        DType::U16,
        DType::I32,
        DType::U32,
        DType::I64,
        DType::F32,
        DType::F64,
    ];

    pub fn byte_width(self) -> usize {
        match self {
            DType::I8 | DType::U8 => 1,
            DType::I16 | DType::U16 => 2,
            DType::I32 | DType::U32 | DType::F32 => 4,
            DType::I64 | DType::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::I8 => "int8",
            DType::U8 => "uint8",
            DType::I16 => "int16",
            DType::U16 => "uint16",
            DType::I32 => "int32",
            DType::U32 => "uint32",
            DType::I64 => "int64",
            DType::F32 => "float32",
            DType::F64 => "float64",
        }
    }

    /// Inclusive integer range, `None` for float types.
    pub(crate) fn int_range(self) -> Option<(i128, i128)> {
        Some(match self {
            DType::I8 => (i8::MIN as i128, i8::MAX as i128),
            DType::U8 => (0, u8::MAX as i128),
            DType::I16 => (i16::MIN as i128, i16::MAX as i128),
            DType::U16 => (0, u16::MAX as i128),
            DType::I32 => (i32::MIN as i128, i32::MAX as i128),
            DType::U32 => (0, u32::MAX as i128),
            DType::I64 => (i64::MIN as i128, i64::MAX as i128),
            DType::F32 | DType::F64 => return None,
        })
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DType {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "int8" | "i8" => DType::I8,
            "uint8" | "u8" => DType::U8,
            "int16" | "i16" => DType::I16,
            "uint16" | "u16" => DType::U16,
            "int32" | "i32" => DType::I32,
            "uint32" | "u32" => DType::U32,
            "int64" | "i64" => DType::I64,
            "float32" | "f32" => DType::F32,
            "float64" | "f64" => DType::F64,
            other => return Err(TensorError::UnknownDType(other.to_string())),
        })
    }
}

impl Serialize for DType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single element value before it is narrowed to a concrete dtype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Scalar {
    Int(i128),
    Float(f64),
}

impl Scalar {
    pub(crate) fn as_f64(self) -> f64 {
        match self {
            Scalar::Int(v) => v as f64,
            Scalar::Float(v) => v,
        }
    }
}

pub(crate) fn read_scalar(dtype: DType, bytes: &[u8]) -> Scalar {
    macro_rules! int {
        ($t:ty) => {
            Scalar::Int(<$t>::from_le_bytes(bytes.try_into().unwrap()) as i128)
        };
    }
    match dtype {
        DType::I8 => int!(i8),
        DType::U8 => int!(u8),
        DType::I16 => int!(i16),
        DType::U16 => int!(u16),
        DType::I32 => int!(i32),
        DType::U32 => int!(u32),
        DType::I64 => int!(i64),
        DType::F32 => Scalar::Float(f32::from_le_bytes(bytes.try_into().unwrap()) as f64),
        DType::F64 => Scalar::Float(f64::from_le_bytes(bytes.try_into().unwrap())),
    }
}

/// Narrow a scalar to `dtype` and append its little-endian bytes.
///
/// Float to integer rounds half to even and saturates; NaN maps to zero.
pub(crate) fn write_scalar(dtype: DType, value: Scalar, out: &mut Vec<u8>) {
    if let Some((lo, hi)) = dtype.int_range() {
        let v = match value {
            Scalar::Int(v) => v.clamp(lo, hi),
            Scalar::Float(f) if f.is_nan() => 0,
            Scalar::Float(f) => {
                let r = f.round_ties_even();
                if r <= lo as f64 {
                    lo
                } else if r >= hi as f64 {
                    hi
                } else {
                    r as i128
                }
            }
        };
        match dtype {
            DType::I8 => out.extend_from_slice(&(v as i8).to_le_bytes()),
            DType::U8 => out.extend_from_slice(&(v as u8).to_le_bytes()),
            DType::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            DType::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            DType::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            DType::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            DType::I64 => out.extend_from_slice(&(v as i64).to_le_bytes()),
            _ => unreachable!(),
        }
    } else {
        match dtype {
            DType::F32 => {
                let v = match value {
                    Scalar::Int(v) => v as f32,
                    Scalar::Float(f) => f as f32,
                };
                out.extend_from_slice(&v.to_le_bytes())
            }
            DType::F64 => out.extend_from_slice(&value.as_f64().to_le_bytes()),
            _ => unreachable!(),
        }
    }
}
