use std::fmt;

use super::{Scale, ShapeRule, SpecError, TensorSpecEntry};

/// Why an input shape was refused; `axis` is the first offending axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRejection {
    pub axis: usize,
    pub reason: String,
}

impl fmt::Display for ShapeRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "axis {}: {}", self.axis, self.reason)
    }
}

/// Check `shape` against an input's shape rule, returning the per-axis
/// step multiples `k` on success.
pub fn validate_input_shape(
    entry: &TensorSpecEntry,
    shape: &[usize],
) -> Result<Vec<usize>, ShapeRejection> {
    let rank = entry.axes.len();
    if shape.len() != rank {
        return Err(ShapeRejection {
            axis: shape.len().min(rank),
            reason: format!("expected rank {rank}, got {}", shape.len()),
        });
    }
    match &entry.shape {
        ShapeRule::Explicit(sizes) => {
            for (axis, (&s, &want)) in shape.iter().zip(sizes).enumerate() {
                if s != want {
                    return Err(ShapeRejection {
                        axis,
                        reason: format!("size {s} differs from required {want}"),
                    });
                }
            }
            Ok(vec![0; rank])
        }
        ShapeRule::Parameterized { min, step } => shape
            .iter()
            .zip(min.iter().zip(step))
            .enumerate()
            .map(|(axis, (&s, (&m, &st)))| {
                let reject = |reason: String| ShapeRejection { axis, reason };
                if st == 0 {
                    if s == m {
                        Ok(0)
                    } else {
                        Err(reject(format!("size {s} must equal {m}")))
                    }
                } else if s < m || (s - m) % st != 0 {
                    Err(reject(format!("size {s} is not {m} + k*{st}")))
                } else {
                    Ok((s - m) / st)
                }
            })
            .collect(),
        ShapeRule::Implicit { .. } => Err(ShapeRejection {
            axis: 0,
            reason: "implicit shape rules describe outputs".into(),
        }),
    }
}

/// `scale * size`, when it is a whole number.
pub(crate) fn scaled(scale: Scale, size: usize) -> Option<usize> {
    let v = scale * Scale::from_integer(size as i64);
    (v.is_integer() && *v.numer() >= 0).then(|| *v.numer() as usize)
}

/// Size of an output given its reference input's shape.
pub fn output_shape_for(entry: &TensorSpecEntry, input_shape: &[usize]) -> Result<Vec<usize>, SpecError> {
    match &entry.shape {
        ShapeRule::Explicit(sizes) => Ok(sizes.clone()),
        ShapeRule::Parameterized { .. } => Err(SpecError::NotApplicable(format!(
            "'{}' has an input shape rule",
            entry.name
        ))),
        ShapeRule::Implicit { scale, offset, .. } => {
            if input_shape.len() != scale.len() {
                return Err(SpecError::NotApplicable(format!(
                    "reference shape {input_shape:?} does not match rank {}",
                    scale.len()
                )));
            }
            scale
                .iter()
                .zip(offset)
                .zip(input_shape)
                .enumerate()
                .map(|(axis, ((&s, &o), &n))| {
                    scaled(s, n).map(|v| v + 2 * o).ok_or_else(|| SpecError::NonIntegralScale {
                        axis,
                        detail: format!("{s} * {n} is not an integer"),
                    })
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn entry(shape: ShapeRule) -> TensorSpecEntry {
        TensorSpecEntry {
            name: "t".into(),
            axes: "byxc".parse().unwrap(),
            shape,
            data_type: DType::F32,
            data_range: None,
            halo: None,
            processing: vec![],
        }
    }

    fn implicit(scale: [f64; 4], offset: [usize; 4]) -> TensorSpecEntry {
        entry(ShapeRule::Implicit {
            reference_input: "in".into(),
            scale: scale.iter().map(|&s| Scale::approximate_float(s).unwrap()).collect(),
            offset: offset.to_vec(),
        })
    }

    #[test]
    fn parameterized_shapes() {
        let e = entry(ShapeRule::Parameterized {
            min: vec![1, 16, 16, 1],
            step: vec![0, 8, 8, 0],
        });
        assert_eq!(validate_input_shape(&e, &[1, 32, 32, 1]).unwrap(), vec![0, 2, 2, 0]);
        assert_eq!(validate_input_shape(&e, &[1, 20, 32, 1]).unwrap_err().axis, 1);
        assert_eq!(validate_input_shape(&e, &[1, 8, 32, 1]).unwrap_err().axis, 1);
        assert_eq!(validate_input_shape(&e, &[2, 16, 16, 1]).unwrap_err().axis, 0);
        assert_eq!(validate_input_shape(&e, &[1, 16, 16, 1]).unwrap(), vec![0; 4]);
        assert!(validate_input_shape(&e, &[1, 16, 16]).is_err());
    }

    #[test]
    fn explicit_shapes() {
        let e = entry(ShapeRule::Explicit(vec![1, 16, 16, 1]));
        assert_eq!(validate_input_shape(&e, &[1, 16, 16, 1]).unwrap(), vec![0; 4]);
        assert_eq!(validate_input_shape(&e, &[1, 16, 17, 1]).unwrap_err().axis, 2);
    }

    #[test]
    fn implicit_outputs() {
        let e = implicit([1.0; 4], [0; 4]);
        assert_eq!(output_shape_for(&e, &[1, 16, 16, 1]).unwrap(), vec![1, 16, 16, 1]);
        let e = implicit([1.0, 2.0, 2.0, 1.0], [0; 4]);
        assert_eq!(output_shape_for(&e, &[1, 16, 16, 1]).unwrap(), vec![1, 32, 32, 1]);
        let e = implicit([1.0, 0.5, 0.5, 1.0], [0; 4]);
        assert!(matches!(
            output_shape_for(&e, &[1, 15, 16, 1]),
            Err(SpecError::NonIntegralScale { axis: 1, .. })
        ));
        let e = implicit([1.0; 4], [0, 3, 2, 0]);
        assert_eq!(output_shape_for(&e, &[1, 10, 10, 1]).unwrap(), vec![1, 16, 14, 1]);
        let e = implicit([1.0, 0.0, 1.0, 1.0], [0, 4, 0, 0]);
        assert_eq!(output_shape_for(&e, &[1, 10, 10, 1]).unwrap(), vec![1, 8, 10, 1]);
    }
}
