//! Deterministic demo and test fixtures: reference-graph models with
//! bundled test tensors, an engine registry, a collection index and zip
//! archives.
//!
//! Expected test outputs are produced by running the same pipeline
//! in-process, so `test-model` on a fixture checks that worker execution
//! reproduces it exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::engine_manager::{Artifact, EngineRegistry, EngineSpec, Framework, Platform};
use crate::engine_worker::{worker_binary_name, InferenceBackend, ReferenceGraphBackend};
use crate::fetch::file_url;
use crate::fsutil::{sha256_bytes, sha256_file};
use crate::model_spec::{parse_model_descriptor, DESCRIPTOR_FILE};
use crate::reference_engine::GRAPH_FILE;
use crate::runner::{predict, InProcess, RunError, Tiling};
use crate::tensor::{write_zrt_file, Tensor};
use crate::zoo_client::{write_model_archive, CollectionIndex, IndexRecord};

pub const TEST_INPUT_FILE: &str = "test_input.zrt";
pub const TEST_OUTPUT_FILE: &str = "test_output.zrt";

pub struct ModelFixture {
    pub id: &'static str,
    pub name: &'static str,
    pub tags: &'static [&'static str],
    pub summary: &'static str,
    /// Descriptor with `{weights_sha}` placeholder and no test tensors.
    pub descriptor: &'static str,
    pub graph: &'static str,
    pub test_input: fn() -> Tensor,
}

const IDENTITY_RDF: &str = "\
format_version: 0.4.0
name: identity
weights:
  reference_graph:
    source: weights.refgraph
    sha256: {weights_sha}
    engine_version: 1.0.0
inputs:
  - name: raw
    axes: byxc
    data_type: float32
    shape:
      min: [1, 1, 1, 1]
      step: [0, 1, 1, 1]
outputs:
  - name: raw
    axes: byxc
    data_type: float32
    shape:
      reference_tensor: raw
      scale: [1, 1, 1, 1]
";

const IDENTITY_GRAPH: &str = r#"{
  "inputs": [{"name": "raw", "axes": "byxc", "dtype": "float32"}],
  "outputs": [{"name": "raw", "dtype": "float32"}],
  "ops": []
}
"#;

const BLUR3_RDF: &str = "\
format_version: 0.4.0
name: blur3
weights:
  reference_graph:
    source: weights.refgraph
    sha256: {weights_sha}
    engine_version: '1'
inputs:
  - name: image
    description: single-channel image, any size from 4x4
    axes: byxc
    data_type: float32
    shape:
      min: [1, 4, 4, 1]
      step: [0, 1, 1, 0]
    preprocessing:
      - name: zero_mean_unit_variance
        kwargs:
          mode: per_sample
          axes: yx
outputs:
  - name: smoothed
    axes: byxc
    data_type: float32
    shape:
      reference_tensor: image
      scale: [1, 1, 1, 1]
    halo: [0, 1, 1, 0]
";

const BLUR3_GRAPH: &str = r#"{
  "inputs": [{"name": "image", "axes": "byxc", "dtype": "float32"}],
  "outputs": [{"name": "smoothed", "dtype": "float32"}],
  "ops": [{"op": "blur3", "input": "image", "output": "smoothed"}]
}
"#;

const POOL_U8_RDF: &str = "\
format_version: 0.4.0
name: pool_u8
weights:
  reference_graph:
    source: weights.refgraph
    sha256: {weights_sha}
    engine_version: 2.0.0
inputs:
  - name: image
    axes: byxc
    data_type: float32
    data_range: [0, 255]
    shape:
      min: [1, 2, 2, 1]
      step: [0, 2, 2, 0]
    preprocessing:
      - name: scale_linear
        kwargs:
          gain: 0.00390625
outputs:
  - name: pooled
    axes: byxc
    data_type: uint8
    shape:
      reference_tensor: image
      scale: [1, 0.5, 0.5, 1]
    halo: [0, 0, 0, 0]
    postprocessing:
      - name: scale_linear
        kwargs:
          gain: 256
";

const POOL_U8_GRAPH: &str = r#"{
  "inputs": [{"name": "image", "axes": "byxc", "dtype": "float32"}],
  "outputs": [{"name": "pooled", "dtype": "float32"}],
  "ops": [
    {"op": "avgpool2", "input": "image", "output": "pooled_raw"},
    {"op": "affine", "a": 1.0, "b": 0.0, "input": "pooled_raw", "output": "pooled"}
  ]
}
"#;

/// Smooth-ish deterministic test pattern in [0, 1).
fn pattern(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = (i as u64).wrapping_mul(2654435761) % 1000;
            h as f64 / 1000.0
        })
        .collect()
}

fn identity_input() -> Tensor {
    let v: Vec<f32> = pattern(30).iter().map(|&x| (x * 8.0 - 4.0) as f32).collect();
    Tensor::from_values("raw", "byxc".parse().unwrap(), vec![1, 3, 5, 2], &v).unwrap()
}

fn blur3_input() -> Tensor {
    let v: Vec<f32> = pattern(256).iter().map(|&x| x as f32).collect();
    Tensor::from_values("image", "byxc".parse().unwrap(), vec![1, 16, 16, 1], &v).unwrap()
}

fn pool_u8_input() -> Tensor {
    let v: Vec<u8> = pattern(64).iter().map(|&x| (x * 256.0) as u8).collect();
    Tensor::from_values("image", "byxc".parse().unwrap(), vec![1, 8, 8, 1], &v).unwrap()
}

pub fn model_fixtures() -> Vec<ModelFixture> {
    vec![
        ModelFixture {
            id: "identity",
            name: "Identity",
            tags: &["test", "pass-through"],
            summary: "byxc float32 pass-through",
            descriptor: IDENTITY_RDF,
            graph: IDENTITY_GRAPH,
            test_input: identity_input,
        },
        ModelFixture {
            id: "blur3",
            name: "Box Blur 3x3",
            tags: &["denoising", "smoothing"],
            summary: "normalized 3x3 box mean, halo 1",
            descriptor: BLUR3_RDF,
            graph: BLUR3_GRAPH,
            test_input: blur3_input,
        },
        ModelFixture {
            id: "pool_u8",
            name: "Pool uint8",
            tags: &["downsampling"],
            summary: "2x2 average pooling of uint8 images",
            descriptor: POOL_U8_RDF,
            graph: POOL_U8_GRAPH,
            test_input: pool_u8_input,
        },
    ]
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |e| RunError::io(path, e)
}

/// Write a model directory: weights, descriptor and test tensors whose
/// expected outputs come from an in-process run.
pub fn write_model(dir: &Path, fixture: &ModelFixture) -> Result<PathBuf, RunError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let weights = dir.join(GRAPH_FILE);
    fs::write(&weights, fixture.graph).map_err(io(&weights))?;
    let base = fixture
        .descriptor
        .replace("{weights_sha}", &sha256_bytes(fixture.graph.as_bytes()));
    let descriptor = parse_model_descriptor(&base)?;

    let input = (fixture.test_input)();
    let model = ReferenceGraphBackend
        .load(&weights)
        .map_err(|e| RunError::Data(format!("fixture graph: {e}")))?;
    let outputs = predict(&descriptor, vec![input.clone()], &mut InProcess(model), &Tiling::Off)?;
    let [output] = outputs.as_slice() else {
        return Err(RunError::Data("fixtures have exactly one output".into()));
    };
    let input_path = dir.join(TEST_INPUT_FILE);
    let output_path = dir.join(TEST_OUTPUT_FILE);
    write_zrt_file(&input, &input_path)?;
    write_zrt_file(output, &output_path)?;
    let sha = |p: &Path| sha256_file(p).map_err(|e| RunError::io(p, e));
    let full = format!(
        "{base}test_inputs:\n  - source: {TEST_INPUT_FILE}\n    sha256: {}\n\
         test_outputs:\n  - source: {TEST_OUTPUT_FILE}\n    sha256: {}\n",
        sha(&input_path)?,
        sha(&output_path)?
    );
    let rdf = dir.join(DESCRIPTOR_FILE);
    fs::write(&rdf, full).map_err(io(&rdf))?;
    Ok(dir.to_path_buf())
}

/// Engines of the fixture registry other than the reference engine. Their
/// artifacts are placeholder files; no worker can execute their formats.
const STUB_ENGINES: &[(Framework, &str, bool, bool)] = &[
    (Framework::Pytorch, "1.4.0", true, false),
    (Framework::Pytorch, "1.7.1", true, false),
    (Framework::Pytorch, "1.7.1", false, true),
    (Framework::Onnx, "1.3.0", true, false),
    (Framework::Tensorflow, "1.15.0", true, false),
    (Framework::Tensorflow, "2.3.1", true, false),
    (Framework::Tensorflow, "2.7.0", true, false),
];

pub const REFERENCE_VERSIONS: &[&str] = &["1.0.0", "2.0.0"];

/// Build the fixture registry. Stub artifacts are written to `stub_dir`,
/// reference engines ship `worker_binary`. Stub engines target
/// linux/x86_64; reference engines also target the running host.
pub fn fixture_registry(stub_dir: &Path, worker_binary: &Path) -> Result<EngineRegistry, RunError> {
    fs::create_dir_all(stub_dir).map_err(io(stub_dir))?;
    let mut entries = Vec::new();
    for &(framework, version, cpu, gpu) in STUB_ENGINES {
        let mut spec = EngineSpec {
            framework,
            version: version.parse()?,
            os: "linux".into(),
            arch: "x86_64".into(),
            cpu,
            gpu,
            artifacts: Vec::new(),
        };
        let file = format!("{}.stub", spec.dir_name());
        let content = format!("placeholder build of {spec}\n");
        let path = stub_dir.join(&file);
        fs::write(&path, &content).map_err(io(&path))?;
        spec.artifacts.push(Artifact {
            url: file_url(&path),
            sha256: sha256_bytes(content.as_bytes()),
            filename: "engine.stub".into(),
        });
        entries.push(spec);
    }
    let worker_sha = sha256_file(worker_binary).map_err(io(worker_binary))?;
    let mut platforms = vec![Platform::new("linux", "x86_64", false), Platform::current()];
    platforms.dedup();
    for platform in platforms {
        for version in REFERENCE_VERSIONS {
            entries.push(EngineSpec {
                framework: Framework::Reference,
                version: version.parse()?,
                os: platform.os.clone(),
                arch: platform.arch.clone(),
                cpu: true,
                gpu: false,
                artifacts: vec![Artifact {
                    url: file_url(worker_binary),
                    sha256: worker_sha.clone(),
                    filename: worker_binary_name(),
                }],
            });
        }
    }
    Ok(EngineRegistry::new(entries)?)
}

/// Ids of the models listed in the fixture index.
pub const INDEXED_MODELS: &[&str] = &["blur3", "identity"];

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub root: PathBuf,
    pub models_dir: PathBuf,
    pub registry_path: PathBuf,
    pub index_path: PathBuf,
    pub registry: EngineRegistry,
    pub index: CollectionIndex,
}

impl FixtureSet {
    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.models_dir.join(id)
    }
}

/// Write every fixture under `root`:
///
/// ```text
/// models/<id>/        model directories
/// archives/<id>.zip   archives of the indexed models
/// index.json          collection index (relative download URLs)
/// stubs/              placeholder engine artifacts
/// registry.json       engine registry
/// ```
pub fn write_fixture_set(root: &Path, worker_binary: &Path) -> Result<FixtureSet, RunError> {
    let models_dir = root.join("models");
    let archives = root.join("archives");
    fs::create_dir_all(&archives).map_err(io(&archives))?;
    let mut records = Vec::new();
    for fixture in model_fixtures() {
        let dir = write_model(&models_dir.join(fixture.id), &fixture)?;
        if INDEXED_MODELS.contains(&fixture.id) {
            let archive = archives.join(format!("{}.zip", fixture.id));
            write_model_archive(&dir, &archive).map_err(io(&archive))?;
            records.push(IndexRecord {
                id: fixture.id.to_string(),
                name: fixture.name.to_string(),
                tags: fixture.tags.iter().map(|t| t.to_string()).collect(),
                download_url: format!("archives/{}.zip", fixture.id),
                sha256: sha256_file(&archive).map_err(io(&archive))?,
                summary: fixture.summary.to_string(),
            });
        }
    }
    let index = CollectionIndex { records };
    let index_path = root.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    fs::write(&index_path, text).map_err(io(&index_path))?;

    let registry = fixture_registry(&root.join("stubs"), worker_binary)?;
    let registry_path = root.join("registry.json");
    fs::write(&registry_path, registry.to_json() + "\n").map_err(io(&registry_path))?;

    let index = CollectionIndex::parse(
        &fs::read_to_string(&index_path).map_err(io(&index_path))?,
        url::Url::parse(&file_url(&index_path)).ok().as_ref(),
    )?;
    Ok(FixtureSet {
        root: root.to_path_buf(),
        models_dir,
        registry_path,
        index_path,
        registry,
        index,
    })
}
