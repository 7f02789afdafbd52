#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use tempfile::TempDir;
use zoorun::engine_manager::{Framework, Platform};
use zoorun::engine_worker::SessionConfig;
use zoorun::fetch::{FetchError, Fetcher, SchemeFetcher};
use zoorun::fixtures::{write_fixture_set, FixtureSet};
use zoorun::runner::Environment;
use zoorun::tensor::{Axes, DType, Tensor};

pub fn worker_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_zoorun-worker"))
}

pub fn cli_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_zoorun"))
}

pub fn fixture_set() -> (TempDir, FixtureSet) {
    let dir = tempfile::tempdir().unwrap();
    let set = write_fixture_set(&dir.path().join("fixtures"), &worker_bin()).unwrap();
    (dir, set)
}

pub fn linux_cpu() -> Platform {
    Platform::new("linux", "x86_64", false)
}

pub fn environment<'a>(set: &FixtureSet, engines_dir: &Path, fetcher: &'a dyn Fetcher) -> Environment<'a> {
    Environment {
        registry: set.registry.clone(),
        engines_dir: engines_dir.to_path_buf(),
        platform: Platform::current(),
        fetcher,
        session: SessionConfig::default(),
        allow_install: true,
    }
}

/// Passes at most `budget` bytes in total through to the sink, then fails
/// the transfer.
pub struct FailAfter {
    inner: SchemeFetcher,
    remaining: AtomicU64,
}

impl FailAfter {
    pub fn new(budget: u64) -> FailAfter {
        FailAfter {
            inner: SchemeFetcher::default(),
            remaining: AtomicU64::new(budget),
        }
    }
}

impl Fetcher for FailAfter {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError> {
        let bytes = self.inner.fetch_bytes(url)?;
        let left = self.remaining.load(Ordering::SeqCst);
        let n = (bytes.len() as u64).min(left) as usize;
        self.remaining.store(left - n as u64, Ordering::SeqCst);
        sink.write_all(&bytes[..n]).map_err(|e| FetchError::transfer(url, e))?;
        if n < bytes.len() {
            return Err(FetchError::transfer(url, format!("connection reset after {n} bytes")));
        }
        Ok(n as u64)
    }
}

/// Counts bytes moved by a working fetcher.
#[derive(Default)]
pub struct Counting {
    inner: SchemeFetcher,
    pub bytes: AtomicU64,
}

impl Fetcher for Counting {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError> {
        let n = self.inner.fetch(url, sink)?;
        self.bytes.fetch_add(n, Ordering::SeqCst);
        Ok(n)
    }
}

pub const SHA_A: &str = "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa";

/// Minimal valid descriptor: one reference_graph weight, one explicit
/// input, one implicit output.
pub fn minimal_descriptor() -> String {
    format!(
        "\
format_version: 0.4.0
name: minimal
weights:
  reference_graph:
    source: weights.refgraph
    sha256: {SHA_A}
inputs:
  - name: raw
    axes: byxc
    data_type: float32
    shape: [1, 16, 16, 1]
outputs:
  - name: out
    axes: byxc
    data_type: float32
    shape:
      reference_tensor: raw
      scale: [1, 1, 1, 1]
      offset: [0, 0, 0, 0]
"
    )
}

pub struct Malformed {
    pub label: &'static str,
    pub text: String,
    /// Field path the schema error must name.
    pub path: &'static str,
}

fn edit(from: &str, to: &str) -> String {
    let base = minimal_descriptor();
    assert!(base.contains(from), "corpus edit '{from}' does not apply");
    base.replacen(from, to, 1)
}

/// Descriptors with exactly one violation each.
pub fn malformed_corpus() -> Vec<Malformed> {
    let m = |label, text, path| Malformed { label, text, path };
    vec![
        m("unknown axis letter", edit("axes: byxc\n    data_type: float32\n    shape: [", "axes: byqc\n    data_type: float32\n    shape: ["), "inputs[0].axes"),
        m("repeated axis letter", edit("axes: byxc\n    data_type: float32\n    shape: [", "axes: byxx\n    data_type: float32\n    shape: ["), "inputs[0].axes"),
        m("halo on input", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    halo: [0, 1, 1, 0]\n"), "inputs[0].halo"),
        m("missing name", edit("name: minimal\n", ""), "name"),
        m("missing format_version", edit("format_version: 0.4.0\n", ""), "format_version"),
        m("missing weights", edit(&format!("weights:\n  reference_graph:\n    source: weights.refgraph\n    sha256: {SHA_A}\n"), ""), "weights"),
        m("empty weights", edit(&format!("weights:\n  reference_graph:\n    source: weights.refgraph\n    sha256: {SHA_A}\n"), "weights: {}\n"), "weights"),
        m("unknown weights tag", edit("  reference_graph:", "  caffe_model:"), "weights.caffe_model"),
        m("short sha256", edit(&format!("sha256: {SHA_A}"), "sha256: abc123"), "weights.reference_graph.sha256"),
        m("uppercase sha256", edit(&format!("sha256: {SHA_A}"), &format!("sha256: {}", SHA_A.to_uppercase())), "weights.reference_graph.sha256"),
        m("missing weights source", edit("    source: weights.refgraph\n", ""), "weights.reference_graph.source"),
        m("extra weights field", edit("    source: weights.refgraph\n", "    source: weights.refgraph\n    license: MIT\n"), "weights.reference_graph.license"),
        m("empty inputs", edit("inputs:\n  - name: raw\n    axes: byxc\n    data_type: float32\n    shape: [1, 16, 16, 1]\n", "inputs: []\n"), "inputs"),
        m("missing outputs", minimal_descriptor().split("outputs:").next().unwrap().to_string(), "outputs"),
        m("unknown data type", edit("data_type: float32\n    shape: [", "data_type: complex64\n    shape: ["), "inputs[0].data_type"),
        m("unknown field in input", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    colour: red\n"), "inputs[0].colour"),
        m("explicit shape rank", edit("shape: [1, 16, 16, 1]", "shape: [1, 16, 16]"), "inputs[0].shape"),
        m("reference to missing input", edit("reference_tensor: raw", "reference_tensor: nope"), "outputs[0].shape.reference_tensor"),
        m("negative scale", edit("scale: [1, 1, 1, 1]", "scale: [1, -1, 1, 1]"), "outputs[0].shape.scale[1]"),
        m("scale rank", edit("scale: [1, 1, 1, 1]", "scale: [1, 1, 1]"), "outputs[0].shape.scale"),
        m("halo rank", edit("      offset: [0, 0, 0, 0]\n", "      offset: [0, 0, 0, 0]\n    halo: [0, 1, 1]\n"), "outputs[0].halo"),
        m("invalid tensor name", edit("  - name: raw\n", "  - name: raw image\n"), "inputs[0].name"),
        m("data_range reversed", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    data_range: [5, 1]\n"), "inputs[0].data_range"),
        m("unknown processing step", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    preprocessing:\n      - name: sharpen\n"), "inputs[0].preprocessing[0].name"),
        m("clip min above max", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    preprocessing:\n      - name: clip\n        kwargs: {min: 2, max: 1}\n"), "inputs[0].preprocessing[0].kwargs.min"),
        m("unknown kwarg", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    preprocessing:\n      - name: scale_linear\n        kwargs: {gain: 2, bias: 1}\n"), "inputs[0].preprocessing[0].kwargs.bias"),
        m("unknown mode", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    preprocessing:\n      - name: zero_mean_unit_variance\n        kwargs: {mode: per_dataset}\n"), "inputs[0].preprocessing[0].kwargs.mode"),
        m("missing binarize threshold", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n    preprocessing:\n      - name: binarize\n"), "inputs[0].preprocessing[0].kwargs.threshold"),
        m("duplicate input names", edit("    shape: [1, 16, 16, 1]\n", "    shape: [1, 16, 16, 1]\n  - name: raw\n    axes: byxc\n    data_type: float32\n    shape: [1, 16, 16, 1]\n"), "inputs[1].name"),
        m("min/step shape on output", edit("      reference_tensor: raw\n      scale: [1, 1, 1, 1]\n      offset: [0, 0, 0, 0]\n", "      min: [1, 1, 1, 1]\n      step: [0, 1, 1, 0]\n"), "outputs[0].shape"),
        m("inputs not a list", edit("inputs:\n  - name: raw\n    axes: byxc\n    data_type: float32\n    shape: [1, 16, 16, 1]\n", "inputs:\n  raw: 1\n"), "inputs"),
        m("test outputs without inputs", format!("{}test_outputs:\n  - out.zrt\n", minimal_descriptor()), "test_inputs"),
    ]
}

/// Hand-derived resolution cases against the fixture registry on
/// linux/x86_64 without GPU: (framework, request, expected version).
pub const RESOLUTION_TABLE: [(Framework, &str, Option<&str>); 12] = [
    (Framework::Pytorch, "1.4.0", Some("1.4.0")),
    (Framework::Pytorch, "1.4.2", Some("1.4.0")),
    (Framework::Pytorch, "1.7.0", Some("1.7.1")),
    (Framework::Pytorch, "1.5.0", Some("1.7.1")),
    (Framework::Pytorch, "1.4", Some("1.4.0")),
    (Framework::Pytorch, "3.0.0", None),
    (Framework::Onnx, "1.3.0", Some("1.3.0")),
    (Framework::Onnx, "1.10.0", Some("1.3.0")),
    (Framework::Tensorflow, "1.15.2", Some("1.15.0")),
    (Framework::Tensorflow, "2.4.0", Some("2.7.0")),
    (Framework::Tensorflow, "2", Some("2.7.0")),
    (Framework::Reference, "2.0.0", Some("2.0.0")),
];

/// Random tensor of the given dtype with values spread over its range.
pub fn random_tensor<R: Rng>(rng: &mut R, dtype: DType, rank: usize) -> Tensor {
    let labels = ["x", "yx", "cyx", "bcyx", "bczyx"][rank - 1];
    let axes: Axes = labels.parse().unwrap();
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(0..5)).collect();
    let n: usize = shape.iter().product();
    let data: Vec<u8> = (0..n * dtype.byte_width()).map(|_| rng.gen()).collect();
    let name = format!("t{}", rng.gen_range(0..1000));
    Tensor::new(name, axes, shape, dtype, data).unwrap()
}
pub mod oracles;
pub mod seams;
pub mod frames;
pub mod isolation;
pub mod crash;
pub mod golden;
