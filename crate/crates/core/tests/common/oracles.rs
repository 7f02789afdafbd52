//! Brute-force f64 reference implementations of the processing steps,
//! written from the formulas alone, plus a randomized sweep that compares
//! them against the library.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoorun::processing::{apply_chain, Mode, ProcContext, ProcStep};
use zoorun::tensor::{DType, Tensor};

pub const F64_TOLERANCE: f64 = 1e-9;
pub const F32_TOLERANCE: f64 = 1e-6;
pub const ZMUV_TOLERANCE: f64 = 1e-10;

pub const AXES: &str = "byxc";

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

/// Element indices grouped by their coordinates on the axes *not* reduced.
/// `reduce` is a set of letters from [`AXES`]; `None` reduces everything.
pub fn groups(shape: &[usize], reduce: Option<&str>) -> Vec<Vec<usize>> {
    let n: usize = shape.iter().product();
    let mut map: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for flat in 0..n {
        let idx = unravel(flat, shape);
        let key: Vec<usize> = AXES
            .chars()
            .zip(&idx)
            .filter(|(a, _)| reduce.is_some_and(|r| !r.contains(*a)))
            .map(|(_, &i)| i)
            .collect();
        map.entry(key).or_default().push(flat);
    }
    map.into_values().collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation, two-pass.
pub fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Linear interpolation at rank `q / 100 * (n - 1)` of the sorted sample.
pub fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let r = q / 100.0 * (s.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    s[lo] + (r - lo as f64) * (s[hi] - s[lo])
}

pub fn binarize(x: &[f64], t: f64) -> Vec<f64> {
    x.iter().map(|&v| if v > t { 1.0 } else { 0.0 }).collect()
}

pub fn clip(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    x.iter().map(|&v| v.max(lo).min(hi)).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

/// `gain[c] * x + offset[c]` with `c` the last (channel) index.
pub fn scale_linear(x: &[f64], shape: &[usize], gain: &[f64], offset: &[f64]) -> Vec<f64> {
    let c = *shape.last().unwrap();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            gain[ch.min(gain.len() - 1)] * v + offset[ch.min(offset.len() - 1)]
        })
        .collect()
}

pub fn zmuv(x: &[f64], shape: &[usize], reduce: Option<&str>, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for g in groups(shape, reduce) {
        let vals: Vec<f64> = g.iter().map(|&i| x[i]).collect();
        let (m, s) = (mean(&vals), pop_std(&vals));
        for &i in &g {
            out[i] = (x[i] - m) / (s + eps);
        }
    }
    out
}

pub fn zmuv_fixed(x: &[f64], shape: &[usize], means: &[f64], stds: &[f64], eps: f64) -> Vec<f64> {
    let c = *shape.last().unwrap();
    x.iter()
        .enumerate()
        .map(|(i, &v)| (v - means[i % c]) / (stds[i % c] + eps))
        .collect()
}

pub fn scale_range(x: &[f64], shape: &[usize], reduce: Option<&str>, lo_q: f64, hi_q: f64, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for g in groups(shape, reduce) {
        let vals: Vec<f64> = g.iter().map(|&i| x[i]).collect();
        let (lo, hi) = (percentile(&vals, lo_q), percentile(&vals, hi_q));
        for &i in &g {
            out[i] = (x[i] - lo) / (hi - lo + eps);
        }
    }
    out
}

type Oracle = Box<dyn Fn(&[f64]) -> Vec<f64>>;

pub const STEPS: [&str; 6] = [
    "binarize",
    "clip",
    "scale_linear",
    "sigmoid",
    "zero_mean_unit_variance",
    "scale_range",
];

#[derive(Debug, Default, Clone)]
pub struct SweepResult {
    pub cases: usize,
    pub max_err_f64: f64,
    pub max_err_f32: f64,
    /// Worst |mean| and |std - 1| over zmuv groups with eps 0.
    pub zmuv_mean: f64,
    pub zmuv_std: f64,
}

fn reduce_choice<R: Rng>(rng: &mut R) -> Option<&'static str> {
    *[None, Some("yx"), Some("byx"), Some("yxc")].choose(rng).unwrap()
}

fn run(step: &ProcStep, t: &Tensor) -> Vec<f64> {
    apply_chain(std::slice::from_ref(step), t, t.dtype(), &mut ProcContext::new())
        .unwrap_or_else(|e| panic!("{step:?}: {e}"))
        .to_f64_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compare one step against its oracle on `cases` random tensors, each in
/// f64 and in f32.
pub fn sweep(step_name: &str, cases: usize, seed: u64) -> SweepResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = SweepResult {
        cases,
        ..SweepResult::default()
    };
    for _ in 0..cases {
        let shape = vec![
            rng.gen_range(1..=2),
            rng.gen_range(2..=6),
            rng.gen_range(2..=6),
            rng.gen_range(1..=3),
        ];
        let n: usize = shape.iter().product();
        let channels = shape[3];
        let x64: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let x32: Vec<f64> = x64.iter().map(|&v| v as f32 as f64).collect();

        let (step, oracle): (ProcStep, Oracle) = match step_name {
            "binarize" => {
                let t = if rng.gen_bool(0.3) { x64[rng.gen_range(0..n)] } else { rng.gen_range(-4.0..4.0) };
                let t = t as f32 as f64;
                (
                    ProcStep::new("binarize", Mode::Fixed).with("threshold", t),
                    Box::new(move |x| binarize(x, t)),
                )
            }
            "clip" => {
                let a: f64 = rng.gen_range(-4.0..4.0);
                let b: f64 = rng.gen_range(-4.0..4.0);
                let (lo, hi) = (a.min(b), a.max(b));
                (
                    ProcStep::new("clip", Mode::Fixed).with("min", lo).with("max", hi),
                    Box::new(move |x| clip(x, lo, hi)),
                )
            }
            "scale_linear" => {
                let len = if rng.gen_bool(0.5) { 1 } else { channels };
                let gain: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let offset: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut step = ProcStep::new("scale_linear", Mode::Fixed);
                step = if len == 1 {
                    step.with("gain", gain[0]).with("offset", offset[0])
                } else {
                    step.with("gain", gain.clone()).with("offset", offset.clone())
                };
                let shape = shape.clone();
                (step, Box::new(move |x| scale_linear(x, &shape, &gain, &offset)))
            }
            "sigmoid" => (ProcStep::new("sigmoid", Mode::Fixed), Box::new(sigmoid)),
            "zero_mean_unit_variance" => {
                let eps = *[0.0, 1e-6, 0.25].choose(&mut rng).unwrap();
                if rng.gen_bool(0.2) {
                    let means: Vec<f64> = (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let stds: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.5..2.0)).collect();
                    let step = ProcStep::new("zero_mean_unit_variance", Mode::Fixed)
                        .with("mean", means.clone())
                        .with("std", stds.clone())
                        .with("eps", eps);
                    let shape = shape.clone();
                    (step, Box::new(move |x| zmuv_fixed(x, &shape, &means, &stds, eps)))
                } else {
                    let reduce = reduce_choice(&mut rng);
                    let mut step = ProcStep::new("zero_mean_unit_variance", Mode::PerSample).with("eps", eps);
                    if let Some(r) = reduce {
                        step = step.with("axes", r);
                    }
                    let shape = shape.clone();
                    (step, Box::new(move |x| zmuv(x, &shape, reduce, eps)))
                }
            }
            "scale_range" => {
                let lo_q = rng.gen_range(0.0..25.0);
                let hi_q = rng.gen_range(75.0..=100.0);
                let eps = *[0.0, 1e-6].choose(&mut rng).unwrap();
                let reduce = reduce_choice(&mut rng);
                let mut step = ProcStep::new("scale_range", Mode::PerSample)
                    .with("min_percentile", lo_q)
                    .with("max_percentile", hi_q)
                    .with("eps", eps);
                if let Some(r) = reduce {
                    step = step.with("axes", r);
                }
                let shape = shape.clone();
                (step, Box::new(move |x| scale_range(x, &shape, reduce, lo_q, hi_q, eps)))
            }
            other => panic!("no oracle for {other}"),
        };

        let t64 = Tensor::from_f64s("t", AXES.parse().unwrap(), shape.clone(), DType::F64, &x64).unwrap();
        let got = run(&step, &t64);
        res.max_err_f64 = res.max_err_f64.max(max_diff(&got, &oracle(&x64)));

        let t32 = Tensor::from_f64s("t", AXES.parse().unwrap(), shape.clone(), DType::F32, &x32).unwrap();
        let got = run(&step, &t32);
        res.max_err_f32 = res.max_err_f32.max(max_diff(&got, &oracle(&x32)));

        if step_name == "zero_mean_unit_variance" {
            let reduce = reduce_choice(&mut rng);
            let mut step = ProcStep::new("zero_mean_unit_variance", Mode::PerSample).with("eps", 0.0);
            if let Some(r) = reduce {
                step = step.with("axes", r);
            }
            let out = run(&step, &t64);
            for g in groups(&shape, reduce) {
                let vals: Vec<f64> = g.iter().map(|&i| out[i]).collect();
                res.zmuv_mean = res.zmuv_mean.max(mean(&vals).abs());
                res.zmuv_std = res.zmuv_std.max((pop_std(&vals) - 1.0).abs());
            }
        }
    }
    res
}

impl SweepResult {
    pub fn passed(&self, step: &str) -> bool {
        let base = self.max_err_f64 <= F64_TOLERANCE && self.max_err_f32 <= F32_TOLERANCE;
        if step == "zero_mean_unit_variance" {
            base && self.zmuv_mean <= ZMUV_TOLERANCE && self.zmuv_std <= ZMUV_TOLERANCE
        } else {
            base
        }
    }
}
