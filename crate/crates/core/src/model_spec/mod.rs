//! Model descriptors (`rdf.yaml`): parsing, validation and shape rules.
//!
//! Descriptors are accepted in YAML or JSON surface syntax. Unknown
//! top-level fields are ignored with a warning; inside typed entries every
//! field must be known. Every schema violation is reported with the dotted
//! path of the offending field, e.g. `inputs[0].shape.step[2]`.

mod emit;
mod parse;
mod shape;

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use thiserror::Error;

use crate::processing::ProcStep;
use crate::tensor::{Axes, DType};

pub use emit::to_canonical_yaml;
pub use parse::{parse_model_descriptor, parse_model_descriptor_with_warnings};
pub use shape::{output_shape_for, validate_input_shape, ShapeRejection};

/// Canonical descriptor file name inside a model directory.
pub const DESCRIPTOR_FILE: &str = "rdf.yaml";

pub type Scale = Ratio<i64>;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("descriptor is not well-formed: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("non-integral output size on axis {axis}: {detail}")]
    NonIntegralScale { axis: usize, detail: String },
    #[error("{0}")]
    NotApplicable(String),
}

impl SpecError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> SpecError {
        SpecError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Field path for schema errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            SpecError::Schema { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightsFormat {
    TensorflowSavedModelBundle,
    TensorflowJs,
    Torchscript,
    Onnx,
    ReferenceGraph,
}

impl WeightsFormat {
    pub const ALL: [WeightsFormat; 5] = [
        WeightsFormat::TensorflowSavedModelBundle,
        WeightsFormat::TensorflowJs,
        WeightsFormat::Torchscript,
        WeightsFormat::Onnx,
        WeightsFormat::ReferenceGraph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightsFormat::TensorflowSavedModelBundle => "tensorflow_saved_model_bundle",
            WeightsFormat::TensorflowJs => "tensorflow_js",
            WeightsFormat::Torchscript => "torchscript",
            WeightsFormat::Onnx => "onnx",
            WeightsFormat::ReferenceGraph => "reference_graph",
        }
    }
}

impl fmt::Display for WeightsFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightsFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WeightsFormat::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| format!("unknown weights format '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeRule {
    Explicit(Vec<usize>),
    /// Inputs only: `size = min + k * step`, `k >= 0`.
    Parameterized { min: Vec<usize>, step: Vec<usize> },
    /// Outputs only: `size = scale * reference + 2 * offset`.
    Implicit {
        reference_input: String,
        scale: Vec<Scale>,
        offset: Vec<usize>,
    },
}

impl fmt::Display for ShapeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeRule::Explicit(s) => write!(f, "explicit {s:?}"),
            ShapeRule::Parameterized { min, step } => write!(f, "min {min:?} step {step:?}"),
            ShapeRule::Implicit {
                reference_input,
                scale,
                offset,
            } => {
                let scale: Vec<String> = scale.iter().map(|s| s.to_string()).collect();
                write!(
                    f,
                    "{reference_input} * [{}] + 2 * {offset:?}",
                    scale.join(", ")
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpecEntry {
    pub name: String,
    pub axes: Axes,
    pub shape: ShapeRule,
    pub data_type: DType,
    pub data_range: Option<(f64, f64)>,
    /// Outputs only, in output pixels.
    pub halo: Option<Vec<usize>>,
    pub processing: Vec<ProcStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsEntry {
    pub format: WeightsFormat,
    pub source: String,
    pub sha256: String,
    pub engine_version_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestTensorRef {
    pub source: String,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    pub name: String,
    pub format_version: String,
    /// In document order.
    pub weights: Vec<WeightsEntry>,
    pub inputs: Vec<TensorSpecEntry>,
    pub outputs: Vec<TensorSpecEntry>,
    pub test_inputs: Vec<TestTensorRef>,
    pub test_outputs: Vec<TestTensorRef>,
}

impl ModelDescriptor {
    pub fn input(&self, name: &str) -> Option<&TensorSpecEntry> {
        self.inputs.iter().find(|e| e.name == name)
    }

    pub fn weights_for(&self, format: WeightsFormat) -> Option<&WeightsEntry> {
        self.weights.iter().find(|w| w.format == format)
    }
}

/// Weights formats in descriptor order, each with its engine version hint.
pub fn weights_formats(descriptor: &ModelDescriptor) -> Vec<(WeightsFormat, Option<&str>)> {
    descriptor
        .weights
        .iter()
        .map(|w| (w.format, w.engine_version_hint.as_deref()))
        .collect()
}

pub fn is_sha256(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}
