//! Pre- and post-processing steps declared by model descriptors.
//!
//! Each step is a [`Processor`] registered by name. A descriptor's
//! [`ProcStep`] is turned into a processor through [`build_step`], which
//! also validates its kwargs; descriptor parsing uses the same path so a
//! parsed descriptor can always be executed.
//!
//! All arithmetic runs in f64 over the tensor's declared axes order, and the
//! chain result is cast to the requested dtype at the very end.

mod kwargs;
mod stats;
mod steps;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::LazyLock;

use thiserror::Error;

use crate::tensor::{Axes, DType, Tensor, TensorError};

pub use kwargs::{KwArg, KwargReader};
pub use stats::{percentile_sorted, GroupLayout};
pub use steps::{Binarize, Clip, ScaleLinear, ScaleRange, Sigmoid, ZeroMeanUnitVariance};

/// Where a step takes its statistics from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Statistics supplied in kwargs.
    Fixed,
    /// Statistics computed from the tensor being processed.
    PerSample,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::PerSample => "per_sample",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "fixed" => Some(Mode::Fixed),
            "per_sample" => Some(Mode::PerSample),
            _ => None,
        }
    }
}

/// A processing step as declared in a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcStep {
    pub name: String,
    pub kwargs: BTreeMap<String, KwArg>,
    pub mode: Mode,
}

impl ProcStep {
    pub fn new(name: impl Into<String>, mode: Mode) -> ProcStep {
        ProcStep {
            name: name.into(),
            kwargs: BTreeMap::new(),
            mode,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<KwArg>) -> ProcStep {
        self.kwargs.insert(key.to_string(), value.into());
        self
    }

    /// Whether this step accepts a `mode` kwarg at all.
    pub fn takes_mode(name: &str) -> bool {
        matches!(name, "zero_mean_unit_variance" | "scale_range")
    }
}

/// Statistics a step computed for one tensor, keyed by group.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleStats {
    MeanStd(Vec<(f64, f64)>),
    Percentiles(Vec<(f64, f64)>),
}

/// Per-execution scratch state for a processing chain.
#[derive(Debug, Default)]
pub struct ProcContext {
    sample_stats: HashMap<(String, usize), SampleStats>,
}

impl ProcContext {
    pub fn new() -> ProcContext {
        ProcContext::default()
    }

    pub fn stats(&self, tensor: &str, step: usize) -> Option<&SampleStats> {
        self.sample_stats.get(&(tensor.to_string(), step))
    }

    pub fn len(&self) -> usize {
        self.sample_stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_stats.is_empty()
    }
}

/// Mutable view of the tensor being processed, in f64.
pub struct Sample<'a> {
    pub axes: &'a Axes,
    pub shape: &'a [usize],
    pub data: &'a mut [f64],
}

/// Cache slot for one (tensor, step) pair. Written at most once.
pub struct StatsSlot<'a> {
    entry: Option<&'a SampleStats>,
    fresh: Option<SampleStats>,
}

impl StatsSlot<'_> {
    pub fn cached(&self) -> Option<&SampleStats> {
        self.entry
    }

    pub fn store(&mut self, stats: SampleStats) {
        debug_assert!(self.entry.is_none() && self.fresh.is_none());
        self.fresh = Some(stats);
    }
}

pub trait Processor: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Check the step can run on tensors with these axes and, when known,
    /// this shape.
    fn check_layout(&self, axes: &Axes, shape: Option<&[usize]>) -> Result<(), String>;

    fn apply(&self, sample: Sample<'_>, stats: &mut StatsSlot<'_>) -> Result<(), ProcessingError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}{message}", key.as_ref().map(|k| format!("kwargs.{k}: ")).unwrap_or_default())]
pub struct KwargsError {
    pub key: Option<String>,
    pub message: String,
}

impl KwargsError {
    pub fn new(key: Option<&str>, message: impl Into<String>) -> KwargsError {
        KwargsError {
            key: key.map(str::to_string),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProcessingError {
    #[error("unknown processing step '{0}'")]
    UnknownStep(String),
    #[error("invalid kwargs for '{step}': {source}")]
    Kwargs {
        step: String,
        #[source]
        source: KwargsError,
    },
    #[error("step does not fit tensor layout: {0}")]
    Layout(String),
    #[error("processing step {index} ('{step}') failed: {source}")]
    Step {
        index: usize,
        step: String,
        #[source]
        source: Box<ProcessingError>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Builder = fn(&ProcStep) -> Result<Box<dyn Processor>, KwargsError>;

macro_rules! register {
    ($map:expr, $ty:ty) => {
        $map.insert(<$ty>::NAME, (|step: &ProcStep| {
            Ok(Box::new(<$ty>::from_step(step)?) as Box<dyn Processor>)
        }) as Builder);
    };
}

static REGISTERED_STEPS: LazyLock<BTreeMap<&'static str, Builder>> = LazyLock::new(|| {
    let mut map = BTreeMap::new();
    register!(map, Binarize);
    register!(map, Clip);
    register!(map, ScaleLinear);
    register!(map, Sigmoid);
    register!(map, ZeroMeanUnitVariance);
    register!(map, ScaleRange);
    map
});

/// Names of every registered processing step.
pub fn registered_steps() -> impl Iterator<Item = &'static str> {
    REGISTERED_STEPS.keys().copied()
}

/// Instantiate the processor for a declared step, validating its kwargs.
pub fn build_step(step: &ProcStep) -> Result<Box<dyn Processor>, ProcessingError> {
    let builder = REGISTERED_STEPS
        .get(step.name.as_str())
        .ok_or_else(|| ProcessingError::UnknownStep(step.name.clone()))?;
    builder(step).map_err(|source| ProcessingError::Kwargs {
        step: step.name.clone(),
        source,
    })
}

/// Apply `steps` in order and cast the result to `out_dtype`.
///
/// An empty chain only casts, so a tensor already of `out_dtype` comes back
/// byte-identical.
pub fn apply_chain(
    steps: &[ProcStep],
    tensor: &Tensor,
    out_dtype: DType,
    ctx: &mut ProcContext,
) -> Result<Tensor, ProcessingError> {
    if steps.is_empty() {
        return Ok(tensor.cast(out_dtype));
    }
    let mut data = tensor.to_f64_vec();
    for (index, step) in steps.iter().enumerate() {
        let wrap = |source: ProcessingError| ProcessingError::Step {
            index,
            step: step.name.clone(),
            source: Box::new(source),
        };
        let processor = build_step(step).map_err(wrap)?;
        processor
            .check_layout(tensor.axes(), Some(tensor.shape()))
            .map_err(|m| wrap(ProcessingError::Layout(m)))?;
        let key = (tensor.name().to_string(), index);
        let mut slot = StatsSlot {
            entry: ctx.sample_stats.get(&key),
            fresh: None,
        };
        let sample = Sample {
            axes: tensor.axes(),
            shape: tensor.shape(),
            data: &mut data,
        };
        processor.apply(sample, &mut slot).map_err(wrap)?;
        if let Some(stats) = slot.fresh {
            ctx.sample_stats.insert(key, stats);
        }
    }
    Ok(Tensor::from_f64s(
        tensor.name(),
        tensor.axes().clone(),
        tensor.shape().to_vec(),
        out_dtype,
        &data,
    )?)
}
