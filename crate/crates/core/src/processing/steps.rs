use super::kwargs::PerChannel;
use super::stats::{channel_ids, mean_std, percentile_sorted, GroupLayout};
use super::{
    KwargReader, KwargsError, Mode, ProcStep, Processor, ProcessingError, Sample, SampleStats,
    StatsSlot,
};
use crate::tensor::{Axes, Axis};

const DEFAULT_EPS: f64 = 1e-6;

fn check_channels(param: &PerChannel, key: &str, axes: &Axes, shape: Option<&[usize]>) -> Result<(), String> {
    let Some(n) = param.channels() else {
        return Ok(());
    };
    let Some(c) = axes.position(Axis::Channel) else {
        return Err(format!("per-channel '{key}' needs a 'c' axis, tensor has '{axes}'"));
    };
    match shape {
        Some(shape) if shape[c] != n => Err(format!(
            "'{key}' has {n} values but the tensor has {} channels",
            shape[c]
        )),
        _ => Ok(()),
    }
}

fn check_reduce_axes(reduce: &Option<Vec<Axis>>, axes: &Axes) -> Result<(), String> {
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
    Ok(())
}

fn reject_mode(step: &ProcStep) -> Result<(), KwargsError> {
    if step.mode != Mode::Fixed {
        return Err(KwargsError::new(Some("mode"), "step takes no mode"));
    }
    Ok(())
}

/// `1` where `x > threshold`, else `0`.
#[derive(Debug, Clone)]
pub struct Binarize {
    pub threshold: f64,
}

impl Binarize {
    pub const NAME: &'static str = "binarize";

    pub fn from_step(step: &ProcStep) -> Result<Self, KwargsError> {
        reject_mode(step)?;
        let mut kw = KwargReader::new(step);
        let threshold = kw.number("threshold")?;
        kw.finish()?;
        Ok(Binarize { threshold })
    }
}

impl Processor for Binarize {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_layout(&self, _: &Axes, _: Option<&[usize]>) -> Result<(), String> {
        Ok(())
    }

    fn apply(&self, sample: Sample<'_>, _: &mut StatsSlot<'_>) -> Result<(), ProcessingError> {
        for v in sample.data.iter_mut() {
            *v = if *v > self.threshold { 1.0 } else { 0.0 };
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Clip {
    pub min: f64,
    pub max: f64,
}

impl Clip {
    pub const NAME: &'static str = "clip";

    pub fn from_step(step: &ProcStep) -> Result<Self, KwargsError> {
        reject_mode(step)?;
        let mut kw = KwargReader::new(step);
        let min = kw.number("min")?;
        let max = kw.number("max")?;
        kw.finish()?;
        if min > max {
            return Err(KwargsError::new(Some("min"), format!("min {min} exceeds max {max}")));
        }
        Ok(Clip { min, max })
    }
}

impl Processor for Clip {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_layout(&self, _: &Axes, _: Option<&[usize]>) -> Result<(), String> {
        Ok(())
    }

    fn apply(&self, sample: Sample<'_>, _: &mut StatsSlot<'_>) -> Result<(), ProcessingError> {
        for v in sample.data.iter_mut() {
            *v = v.clamp(self.min, self.max);
        }
        Ok(())
    }
}

/// `gain * x + offset`, either scalar or one value per channel.
#[derive(Debug, Clone)]
pub struct ScaleLinear {
    pub gain: PerChannel,
    pub offset: PerChannel,
}

impl ScaleLinear {
    pub const NAME: &'static str = "scale_linear";

    pub fn from_step(step: &ProcStep) -> Result<Self, KwargsError> {
        reject_mode(step)?;
        let mut kw = KwargReader::new(step);
        let gain = kw.per_channel("gain")?.unwrap_or(PerChannel::Scalar(1.0));
        let offset = kw.per_channel("offset")?.unwrap_or(PerChannel::Scalar(0.0));
        kw.finish()?;
        if let (Some(a), Some(b)) = (gain.channels(), offset.channels()) {
            if a != b {
                return Err(KwargsError::new(
                    Some("offset"),
                    format!("{b} offsets for {a} gains"),
                ));
            }
        }
        Ok(ScaleLinear { gain, offset })
    }
}

impl Processor for ScaleLinear {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_layout(&self, axes: &Axes, shape: Option<&[usize]>) -> Result<(), String> {
        check_channels(&self.gain, "gain", axes, shape)?;
        check_channels(&self.offset, "offset", axes, shape)
    }

    fn apply(&self, sample: Sample<'_>, _: &mut StatsSlot<'_>) -> Result<(), ProcessingError> {
        let channels = channel_ids(sample.axes, sample.shape);
        for (v, &c) in sample.data.iter_mut().zip(&channels) {
            *v = self.gain.get(c) * *v + self.offset.get(c);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sigmoid;

impl Sigmoid {
    pub const NAME: &'static str = "sigmoid";

    pub fn from_step(step: &ProcStep) -> Result<Self, KwargsError> {
        reject_mode(step)?;
        KwargReader::new(step).finish()?;
        Ok(Sigmoid)
    }

    pub fn eval(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
}

impl Processor for Sigmoid {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_layout(&self, _: &Axes, _: Option<&[usize]>) -> Result<(), String> {
        Ok(())
    }

    fn apply(&self, sample: Sample<'_>, _: &mut StatsSlot<'_>) -> Result<(), ProcessingError> {
        for v in sample.data.iter_mut() {
            *v = Sigmoid::eval(*v);
        }
        Ok(())
    }
}

/// `(x - mean) / (std + eps)` with population std.
#[derive(Debug, Clone)]
pub struct ZeroMeanUnitVariance {
    pub mode: Mode,
    pub axes: Option<Vec<Axis>>,
    pub eps: f64,
    /// Fixed-mode statistics.
    pub mean: Option<PerChannel>,
    pub std: Option<PerChannel>,
}

impl ZeroMeanUnitVariance {
    pub const NAME: &'static str = "zero_mean_unit_variance";

    pub fn from_step(step: &ProcStep) -> Result<Self, KwargsError> {
        let mut kw = KwargReader::new(step);
        let axes = kw.axes("axes")?;
        let eps = kw.opt_number("eps")?.unwrap_or(DEFAULT_EPS);
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(KwargsError::new(Some("eps"), "must be a finite non-negative number"));
        }
        let (mean, std) = match step.mode {
            Mode::PerSample => (None, None),
            Mode::Fixed => {
                let mean = kw
                    .per_channel("mean")?
                    .ok_or_else(|| KwargsError::new(Some("mean"), "required in fixed mode"))?;
                let std = kw
                    .per_channel("std")?
                    .ok_or_else(|| KwargsError::new(Some("std"), "required in fixed mode"))?;
                (Some(mean), Some(std))
            }
        };
        kw.finish()?;
        Ok(ZeroMeanUnitVariance {
            mode: step.mode,
            axes,
            eps,
            mean,
            std,
        })
    }
}

impl Processor for ZeroMeanUnitVariance {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_layout(&self, axes: &Axes, shape: Option<&[usize]>) -> Result<(), String> {
        check_reduce_axes(&self.axes, axes)?;
        if let (Some(mean), Some(std)) = (&self.mean, &self.std) {
            check_channels(mean, "mean", axes, shape)?;
            check_channels(std, "std", axes, shape)?;
        }
        Ok(())
    }

    fn apply(&self, sample: Sample<'_>, slot: &mut StatsSlot<'_>) -> Result<(), ProcessingError> {
        if let (Some(mean), Some(std)) = (&self.mean, &self.std) {
            let channels = channel_ids(sample.axes, sample.shape);
            for (v, &c) in sample.data.iter_mut().zip(&channels) {
                *v = (*v - mean.get(c)) / (std.get(c) + self.eps);
            }
            return Ok(());
        }
        let layout = GroupLayout::new(sample.axes, sample.shape, self.axes.as_deref())
            .map_err(ProcessingError::Layout)?;
        let stats = match slot.cached() {
            Some(SampleStats::MeanStd(s)) if s.len() == layout.groups() => s.clone(),
            _ => {
                let s: Vec<(f64, f64)> = layout.collect(sample.data).iter().map(|g| mean_std(g)).collect();
                slot.store(SampleStats::MeanStd(s.clone()));
                s
            }
        };
        for (v, g) in sample.data.iter_mut().zip(layout.group_ids()) {
            let (mean, std) = stats[g];
            *v = (*v - mean) / (std + self.eps);
        }
        Ok(())
    }
}

/// `(x - p_lo) / (p_hi - p_lo + eps)` with per-sample percentiles.
#[derive(Debug, Clone)]
pub struct ScaleRange {
    pub axes: Option<Vec<Axis>>,
    pub min_percentile: f64,
    pub max_percentile: f64,
    pub eps: f64,
}

impl ScaleRange {
    pub const NAME: &'static str = "scale_range";

    pub fn from_step(step: &ProcStep) -> Result<Self, KwargsError> {
        if step.mode != Mode::PerSample {
            return Err(KwargsError::new(Some("mode"), "only per_sample is supported"));
        }
        let mut kw = KwargReader::new(step);
        let axes = kw.axes("axes")?;
        let min_percentile = kw.opt_number("min_percentile")?.unwrap_or(0.0);
        let max_percentile = kw.opt_number("max_percentile")?.unwrap_or(100.0);
        let eps = kw.opt_number("eps")?.unwrap_or(DEFAULT_EPS);
        kw.finish()?;
        if !(0.0..=100.0).contains(&min_percentile) {
            return Err(KwargsError::new(Some("min_percentile"), "must be within [0, 100]"));
        }
        if !(0.0..=100.0).contains(&max_percentile) || max_percentile <= min_percentile {
            return Err(KwargsError::new(
                Some("max_percentile"),
                "must be within [0, 100] and above min_percentile",
            ));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(KwargsError::new(Some("eps"), "must be a finite non-negative number"));
        }
        Ok(ScaleRange {
            axes,
            min_percentile,
            max_percentile,
            eps,
        })
    }
}

impl Processor for ScaleRange {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_layout(&self, axes: &Axes, _: Option<&[usize]>) -> Result<(), String> {
        check_reduce_axes(&self.axes, axes)
    }

    fn apply(&self, sample: Sample<'_>, slot: &mut StatsSlot<'_>) -> Result<(), ProcessingError> {
        let layout = GroupLayout::new(sample.axes, sample.shape, self.axes.as_deref())
            .map_err(ProcessingError::Layout)?;
        let bounds = match slot.cached() {
            Some(SampleStats::Percentiles(s)) if s.len() == layout.groups() => s.clone(),
            _ => {
                let s: Vec<(f64, f64)> = layout
                    .collect(sample.data)
                    .into_iter()
                    .map(|mut g| {
                        g.sort_by(f64::total_cmp);
                        (
                            percentile_sorted(&g, self.min_percentile),
                            percentile_sorted(&g, self.max_percentile),
                        )
                    })
                    .collect();
                slot.store(SampleStats::Percentiles(s.clone()));
                s
            }
        };
        for (v, g) in sample.data.iter_mut().zip(layout.group_ids()) {
            let (lo, hi) = bounds[g];
            *v = (*v - lo) / (hi - lo + self.eps);
        }
        Ok(())
    }
}
