use std::collections::BTreeSet;

use super::{KwargsError, ProcStep};
use crate::tensor::{Axes, Axis};

/// A processing kwarg value.
#[derive(Debug, Clone, PartialEq)]
pub enum KwArg {
    Number(f64),
    List(Vec<f64>),
    Text(String),
}

impl From<f64> for KwArg {
    fn from(v: f64) -> Self {
        KwArg::Number(v)
    }
}

impl From<Vec<f64>> for KwArg {
    fn from(v: Vec<f64>) -> Self {
        KwArg::List(v)
    }
}

impl From<&str> for KwArg {
    fn from(v: &str) -> Self {
        KwArg::Text(v.to_string())
    }
}

/// Scalar or per-channel parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum PerChannel {
    Scalar(f64),
    Channels(Vec<f64>),
}

impl PerChannel {
    pub fn get(&self, channel: usize) -> f64 {
        match self {
            PerChannel::Scalar(v) => *v,
            PerChannel::Channels(v) => v[channel],
        }
    }

    pub fn channels(&self) -> Option<usize> {
        match self {
            PerChannel::Scalar(_) => None,
            PerChannel::Channels(v) => Some(v.len()),
        }
    }
}

/// Typed access to a step's kwargs that tracks which keys were consumed,
/// so [`KwargReader::finish`] can reject anything unexpected.
pub struct KwargReader<'a> {
    step: &'a ProcStep,
    seen: BTreeSet<&'a str>,
}

impl<'a> KwargReader<'a> {
    pub fn new(step: &'a ProcStep) -> KwargReader<'a> {
        KwargReader {
            step,
            seen: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &'a str) -> Option<&'a KwArg> {
        self.seen.insert(key);
        self.step.kwargs.get(key)
    }

    pub fn number(&mut self, key: &'a str) -> Result<f64, KwargsError> {
        self.opt_number(key)?
            .ok_or_else(|| KwargsError::new(Some(key), "required"))
    }

    pub fn opt_number(&mut self, key: &'a str) -> Result<Option<f64>, KwargsError> {
        match self.get(key) {
            None => Ok(None),
            Some(KwArg::Number(v)) if !v.is_nan() => Ok(Some(*v)),
            Some(_) => Err(KwargsError::new(Some(key), "expected a number")),
        }
    }

    pub fn per_channel(&mut self, key: &'a str) -> Result<Option<PerChannel>, KwargsError> {
        match self.get(key) {
            None => Ok(None),
            Some(KwArg::Number(v)) if v.is_finite() => Ok(Some(PerChannel::Scalar(*v))),
            Some(KwArg::List(v)) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => {
                Ok(Some(PerChannel::Channels(v.clone())))
            }
            Some(_) => Err(KwargsError::new(
                Some(key),
                "expected a finite number or non-empty list of finite numbers",
            )),
        }
    }

    /// Subset of axes to reduce over; `None` means the whole tensor.
    pub fn axes(&mut self, key: &'a str) -> Result<Option<Vec<Axis>>, KwargsError> {
        match self.get(key) {
            None => Ok(None),
            Some(KwArg::Text(s)) => s
                .parse::<Axes>()
                .map(|a| Some(a.as_slice().to_vec()))
                .map_err(|e| KwargsError::new(Some(key), e.to_string())),
            Some(_) => Err(KwargsError::new(Some(key), "expected an axes string")),
        }
    }

    pub fn finish(self) -> Result<(), KwargsError> {
        for key in self.step.kwargs.keys() {
            if !self.seen.contains(key.as_str()) {
                return Err(KwargsError::new(Some(key), "unexpected kwarg"));
            }
        }
        Ok(())
    }
}
