use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TensorError;

/// Semantic role of one tensor dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Batch,
    Index,
    Channel,
    Z,
    Y,
    X,
    Time,
}

impl Axis {
    pub fn from_char(c: char) -> Option<Axis> {
        Some(match c {
            'b' => Axis::Batch,
            'i' => Axis::Index,
            'c' => Axis::Channel,
            'z' => Axis::Z,
            'y' => Axis::Y,
            'x' => Axis::X,
            't' => Axis::Time,
            _ => return None,
        })
    }

    pub fn as_char(self) -> char {
        match self {
            Axis::Batch => 'b',
            Axis::Index => 'i',
            Axis::Channel => 'c',
            Axis::Z => 'z',
            Axis::Y => 'y',
            Axis::X => 'x',
            Axis::Time => 't',
        }
    }

    /// Spatial axes are the only ones that get tiled.
    pub fn is_spatial(self) -> bool {
        matches!(self, Axis::Z | Axis::Y | Axis::X)
    }
}

/// Ordered, duplicate-free, non-empty list of axis labels, e.g. `byxc`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Axes(Vec<Axis>);

impl Axes {
    pub fn new(labels: Vec<Axis>) -> Result<Axes, TensorError> {
        if labels.is_empty() {
            return Err(TensorError::BadAxes("axes must not be empty".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(TensorError::BadAxes(format!(
                    "duplicate axis '{}'",
                    a.as_char()
                )));
            }
        }
        Ok(Axes(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Axis> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[Axis] {
        &self.0
    }

    pub fn position(&self, axis: Axis) -> Option<usize> {
        self.0.iter().position(|&a| a == axis)
    }

    pub fn contains(&self, axis: Axis) -> bool {
        self.0.contains(&axis)
    }

    /// For each axis of `target`, the index of that axis in `self`.
    /// Fails unless `target` is a permutation of `self`.
    pub fn permutation_to(&self, target: &Axes) -> Result<Vec<usize>, TensorError> {
        if target.len() != self.len() {
            return Err(TensorError::BadAxes(format!(
                "'{target}' is not a permutation of '{self}'"
            )));
        }
        target
            .iter()
            .map(|a| {
                self.position(a).ok_or_else(|| {
                    TensorError::BadAxes(format!("'{target}' is not a permutation of '{self}'"))
                })
            })
            .collect()
    }
}

impl fmt::Display for Axes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "{}", a.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for Axes {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let labels = s
            .chars()
            .map(|c| {
                Axis::from_char(c)
                    .ok_or_else(|| TensorError::BadAxes(format!("unknown axis letter '{c}' in '{s}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Axes::new(labels)
    }
}

impl Serialize for Axes {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Axes {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
