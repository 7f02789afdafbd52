mod common;

use common::oracles::{self, STEPS};
use zoorun::processing::{apply_chain, registered_steps, Mode, ProcContext, ProcStep};
use zoorun::tensor::{DType, Tensor};

fn t(values: &[f64], dtype: DType) -> Tensor {
    Tensor::from_f64s("t", "x".parse().unwrap(), vec![values.len()], dtype, values).unwrap()
}

fn apply(steps: &[ProcStep], values: &[f64], dtype: DType) -> Vec<f64> {
    apply_chain(steps, &t(values, dtype), dtype, &mut ProcContext::new())
        .unwrap()
        .to_f64_vec()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn every_step_has_an_oracle() {
    let mut names: Vec<&str> = registered_steps().collect();
    let mut ours = STEPS.to_vec();
    names.sort();
    ours.sort();
    assert_eq!(names, ours);
}

#[test]
fn randomized_steps_match_oracles() {
    for (i, step) in STEPS.iter().enumerate() {
        let r = oracles::sweep(step, 200, 0x5eed + i as u64);
        assert!(r.passed(step), "{step}: {r:?}");
    }
}

#[test]
fn chain_examples() {
    let empty = t(&[1.5, -2.0], DType::F32);
    let same = apply_chain(&[], &empty, DType::F32, &mut ProcContext::new()).unwrap();
    assert_eq!(same.bytes(), empty.bytes());

    let lin = ProcStep::new("scale_linear", Mode::Fixed).with("gain", 2.0).with("offset", 1.0);
    assert_eq!(apply(&[lin], &[0.0, 1.0], DType::F32), vec![1.0, 3.0]);

    let z = ProcStep::new("zero_mean_unit_variance", Mode::PerSample).with("eps", 0.0);
    let s = ProcStep::new("sigmoid", Mode::Fixed);
    let out = apply(&[z, s], &[0.0, 2.0], DType::F32);
    // sigmoid(-1), sigmoid(1) from the composed single-step oracles
    let expected = oracles::sigmoid(&oracles::zmuv(&[0.0, 2.0], &[1, 1, 2, 1], None, 0.0));
    assert!(close(&out, &expected, 1e-6), "{out:?}");
    assert!(close(&out, &[0.26894142, 0.73105858], 1e-6));
}

#[test]
fn step_examples() {
    let b = |th: f64| ProcStep::new("binarize", Mode::Fixed).with("threshold", th);
    assert_eq!(apply(&[b(0.5)], &[0.2, 0.5, 0.7], DType::F64), vec![0.0, 0.0, 1.0]);
    assert_eq!(apply(&[b(f64::NEG_INFINITY)], &[-1e300, 0.0, 3.0], DType::F64), vec![1.0; 3]);
    assert_eq!(apply(&[b(0.0)], &[0.0], DType::F64), vec![0.0]);

    let c = |lo: f64, hi: f64| ProcStep::new("clip", Mode::Fixed).with("min", lo).with("max", hi);
    assert_eq!(apply(&[c(0.0, 1.0)], &[-2.0, 0.5, 9.0], DType::F64), vec![0.0, 0.5, 1.0]);
    assert_eq!(apply(&[c(0.3, 0.3)], &[-2.0, 0.5, 9.0], DType::F64), vec![0.3; 3]);

    let identity = ProcStep::new("scale_linear", Mode::Fixed).with("gain", 1.0).with("offset", 0.0);
    assert_eq!(apply(&[identity], &[3.25, -1.0], DType::F64), vec![3.25, -1.0]);
    let neg = ProcStep::new("scale_linear", Mode::Fixed).with("gain", -1.0);
    assert_eq!(apply(&[neg], &[3.0], DType::F64), vec![-3.0]);
    let per_channel = ProcStep::new("scale_linear", Mode::Fixed).with("gain", vec![1.0, 2.0]);
    let ones = Tensor::from_f64s("t", "yxc".parse().unwrap(), vec![1, 2, 2], DType::F64, &[1.0; 4]).unwrap();
    let out = apply_chain(&[per_channel], &ones, DType::F64, &mut ProcContext::new()).unwrap();
    assert_eq!(out.to_f64_vec(), vec![1.0, 2.0, 1.0, 2.0]);

    let sig = ProcStep::new("sigmoid", Mode::Fixed);
    let s = apply(std::slice::from_ref(&sig), &[0.0, 100.0, 3.7, -3.7], DType::F64);
    assert_eq!(s[0], 0.5);
    assert_eq!(s[1], 1.0);
    assert!((s[2] + s[3] - 1.0).abs() <= 1e-12);

    let z = |eps: f64| ProcStep::new("zero_mean_unit_variance", Mode::PerSample).with("eps", eps);
    assert_eq!(apply(&[z(0.0)], &[0.0, 2.0], DType::F64), vec![-1.0, 1.0]);
    assert_eq!(apply(&[z(1e-6)], &[4.0; 5], DType::F64), vec![0.0; 5]);

    let r = |lo: f64, hi: f64| {
        ProcStep::new("scale_range", Mode::PerSample)
            .with("min_percentile", lo)
            .with("max_percentile", hi)
    };
    let out = apply(&[r(0.0, 100.0).with("eps", 0.0)], &[2.0, 4.0, 6.0], DType::F64);
    assert_eq!(out, vec![0.0, 0.5, 1.0]);
    assert_eq!(apply(&[r(0.0, 100.0)], &[7.0; 4], DType::F64), vec![0.0; 4]);
}

#[test]
fn percentiles_on_a_hundred_values() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let step = ProcStep::new("scale_range", Mode::PerSample)
        .with("min_percentile", 10.0)
        .with("max_percentile", 90.0)
        .with("eps", 0.0);
    let out = apply(&[step], &x, DType::F64);
    let (lo, hi) = (oracles::percentile(&x, 10.0), oracles::percentile(&x, 90.0));
    let expected: Vec<f64> = x.iter().map(|v| (v - lo) / (hi - lo)).collect();
    assert!(close(&out, &expected, 1e-9));
}

#[test]
fn chains_are_deterministic_and_ordered() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let clip = ProcStep::new("clip", Mode::Fixed).with("min", -1.0).with("max", 1.0);
    let lin = ProcStep::new("scale_linear", Mode::Fixed).with("gain", 2.0).with("offset", 0.5);
    let zmuv = ProcStep::new("zero_mean_unit_variance", Mode::PerSample);
    let chain = [zmuv.clone(), clip.clone(), lin.clone()];
    let a = apply_chain(&chain, &t(&x, DType::F32), DType::F32, &mut ProcContext::new()).unwrap();
    let b = apply_chain(&chain, &t(&x, DType::F32), DType::F32, &mut ProcContext::new()).unwrap();
    assert_eq!(a.bytes(), b.bytes());
    assert_ne!(
        apply(&[clip.clone(), lin.clone()], &x, DType::F64),
        apply(&[lin, clip], &x, DType::F64)
    );
}

#[test]
fn output_ranges() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..500).map(|_| rng.gen_range(-30.0..30.0)).collect();
    let bin = apply(&[ProcStep::new("binarize", Mode::Fixed).with("threshold", 0.1)], &x, DType::F64);
    assert!(bin.iter().all(|&v| v == 0.0 || v == 1.0));
    let clip = apply(&[ProcStep::new("clip", Mode::Fixed).with("min", -2.0).with("max", 3.0)], &x, DType::F64);
    assert!(clip.iter().all(|&v| (-2.0..=3.0).contains(&v)));
    let sig = apply(&[ProcStep::new("sigmoid", Mode::Fixed)], &x, DType::F64);
    assert!(sig.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn fixed_mode_needs_statistics() {
    let step = ProcStep::new("zero_mean_unit_variance", Mode::Fixed);
    assert!(apply_chain(&[step], &t(&[1.0], DType::F64), DType::F64, &mut ProcContext::new()).is_err());
}
