use crate::tensor::{for_each_index, strides, Axes, Axis};

/// Partition of a tensor's elements into statistic groups.
///
/// Axes in the reduce set are pooled together; every combination of the
/// remaining axes forms its own group.
#[derive(Debug, Clone)]
pub struct GroupLayout {
    shape: Vec<usize>,
    group_strides: Vec<usize>,
    groups: usize,
}

impl GroupLayout {
    pub fn new(axes: &Axes, shape: &[usize], reduce: Option<&[Axis]>) -> Result<GroupLayout, String> {
        if let Some(reduce) = reduce {
            for a in reduce {
                if !axes.contains(*a) {
                    return Err(format!(
                        "statistics axis '{}' not in tensor axes '{axes}'",
                        a.as_char()
                    ));
                }
            }
        }
        let kept: Vec<usize> = axes
            .iter()
            .zip(shape)
            .map(|(a, &s)| match reduce {
                Some(r) if !r.contains(&a) => s,
                _ => 1,
            })
            .collect();
        let kept_strides = strides(&kept);
        let group_strides = kept
            .iter()
            .zip(&kept_strides)
            .map(|(&k, &s)| if k == 1 { 0 } else { s })
            .collect();
        Ok(GroupLayout {
            shape: shape.to_vec(),
            group_strides,
            groups: kept.iter().product(),
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Group id of every element, in row-major order.
    pub fn group_ids(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.shape.iter().product());
        if self.shape.is_empty() {
            return ids;
        }
        for_each_index(&self.shape, |idx| {
            ids.push(idx.iter().zip(&self.group_strides).map(|(i, s)| i * s).sum());
        });
        ids
    }

    /// Elements of each group, in row-major order.
    pub fn collect(&self, data: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.groups];
        for (&g, &v) in self.group_ids().iter().zip(data) {
            out[g].push(v);
        }
        out
    }
}

/// Channel index of every element; all zeros without a channel axis.
pub(crate) fn channel_ids(axes: &Axes, shape: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    match axes.position(Axis::Channel) {
        None => vec![0; n],
        Some(c) => {
            let stride = strides(shape)[c];
            (0..n).map(|i| (i / stride) % shape[c]).collect()
        }
    }
}

/// Population mean and standard deviation, two passes.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Percentile `q` (0..=100) of ascending `sorted`, interpolating linearly
/// at rank `q/100 * (N-1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let rank = q / 100.0 * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}
