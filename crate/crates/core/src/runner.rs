//! End-to-end prediction: input matching, preprocessing, (tiled) inference
//! through an [`Executor`], postprocessing, and model self-tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine_manager::{
    engine_for_model, install_engine, list_installed, EngineError, EngineRegistry, Platform,
};
use crate::engine_worker::{open_session, LoadedModel, ModelSession, SessionConfig, WorkerError};
use crate::fetch::Fetcher;
use crate::fsutil;
use crate::model_spec::{
    parse_model_descriptor, validate_input_shape, ModelDescriptor, ShapeRejection, ShapeRule, SpecError,
    TensorSpecEntry, DESCRIPTOR_FILE,
};
use crate::processing::{apply_chain, ProcContext, ProcessingError};
use crate::tensor::{read_zrt_file, Axis, Tensor, TensorError};
use crate::tiling::{default_extents, plan_tiles, run_tiled, TiledRunError, TilingError};
use crate::zoo_client::ZooError;

/// Float outputs of `test-model` may differ from the expected tensors by at
/// most this much; integer outputs must match exactly.
pub const FLOAT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("input '{input}': {rejection}")]
    Shape { input: String, rejection: ShapeRejection },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Worker(#[from] WorkerError),
    #[error("{0}")]
    Integrity(String),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl RunError {
    /// 1 usage, 2 data or validation, 3 engine or worker, 4 integrity.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Spec(_) | RunError::Shape { .. } | RunError::Data(_) | RunError::Io { .. } => 2,
            RunError::Engine(EngineError::ChecksumMismatch { .. }) => 4,
            RunError::Engine(EngineError::Fetch(_)) => 3,
            RunError::Engine(_) | RunError::Worker(_) => 3,
            RunError::Integrity(_) => 4,
            RunError::Zoo(ZooError::ChecksumMismatch { .. }) => 4,
            RunError::Zoo(ZooError::UnknownModel(_)) => 1,
            RunError::Zoo(_) => 2,
        }
    }

    pub fn io(path: &Path, e: impl ToString) -> RunError {
        RunError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<TensorError> for RunError {
    fn from(e: TensorError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<ProcessingError> for RunError {
    fn from(e: ProcessingError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<TilingError> for RunError {
    fn from(e: TilingError) -> Self {
        RunError::Data(e.to_string())
    }
}

/// Something that maps model inputs to raw model outputs.
pub trait Executor {
    fn infer(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>, RunError>;
}

impl Executor for ModelSession {
    fn infer(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>, RunError> {
        Ok(self.run(&inputs)?)
    }
}

/// Runs a backend inside the current process, without a worker.
pub struct InProcess(pub Box<dyn LoadedModel>);

impl Executor for InProcess {
    fn infer(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>, RunError> {
        self.0.run(inputs).map_err(|e| RunError::Worker(WorkerError::Inference(e)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Tiling {
    /// Tile spatial axes larger than the default extent.
    #[default]
    Auto,
    Off,
    Extents(BTreeMap<Axis, usize>),
}

pub fn load_descriptor(model_dir: &Path) -> Result<ModelDescriptor, RunError> {
    let path = model_dir.join(DESCRIPTOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
    Ok(parse_model_descriptor(&text)?)
}

/// Pair tensors with descriptor inputs: by name when all names match,
/// otherwise by position.
fn match_inputs(descriptor: &ModelDescriptor, mut tensors: Vec<Tensor>) -> Result<Vec<Tensor>, RunError> {
    if tensors.len() != descriptor.inputs.len() {
        return Err(RunError::Data(format!(
            "model takes {} input(s), got {}",
            descriptor.inputs.len(),
            tensors.len()
        )));
    }
    let by_name = descriptor
        .inputs
        .iter()
        .all(|e| tensors.iter().any(|t| t.name() == e.name));
    let mut out = Vec::with_capacity(tensors.len());
    for entry in &descriptor.inputs {
        let t = if by_name {
            let i = tensors.iter().position(|t| t.name() == entry.name).expect("checked");
            tensors.remove(i)
        } else {
            tensors.remove(0).with_name(&entry.name)
        };
        let t = t.reorder_axes(&entry.axes).map_err(|e| {
            RunError::Data(format!(
                "input '{}' has axes '{}', model expects '{}': {e}",
                entry.name,
                t.axes(),
                entry.axes
            ))
        })?;
        validate_input_shape(entry, t.shape()).map_err(|rejection| RunError::Shape {
            input: entry.name.clone(),
            rejection,
        })?;
        out.push(t);
    }
    Ok(out)
}

/// Per-axis halo (output pixels) and scale for tiling the first input.
fn tiling_law(descriptor: &ModelDescriptor) -> Result<(Vec<usize>, Vec<crate::model_spec::Scale>), RunError> {
    let first = &descriptor.inputs[0];
    let rank = first.axes.len();
    let mut scale = None;
    let mut halo = vec![0usize; rank];
    let mut any_halo = false;
    for out in &descriptor.outputs {
        let ShapeRule::Implicit {
            reference_input,
            scale: s,
            ..
        } = &out.shape
        else {
            return Err(RunError::Data(format!(
                "output '{}' has no shape law relative to an input and cannot be tiled",
                out.name
            )));
        };
        if reference_input != &first.name {
            return Err(RunError::Data(format!(
                "output '{}' refers to '{reference_input}'; only outputs of the first input can be tiled",
                out.name
            )));
        }
        match &scale {
            None => scale = Some(s.clone()),
            Some(prev) if prev != s => {
                return Err(RunError::Data("outputs with different scales cannot be tiled together".into()))
            }
            _ => {}
        }
        if let Some(h) = &out.halo {
            any_halo = true;
            for (acc, &v) in halo.iter_mut().zip(h) {
                *acc = (*acc).max(v);
            }
        }
    }
    if !any_halo {
        log::warn!("model declares no output halo; tiles are stitched without overlap");
    }
    Ok((halo, scale.unwrap_or_default()))
}

fn collect_outputs(descriptor: &ModelDescriptor, raw: Vec<Tensor>) -> Result<Vec<(usize, Tensor)>, RunError> {
    let mut out = Vec::with_capacity(descriptor.outputs.len());
    for (i, entry) in descriptor.outputs.iter().enumerate() {
        let t = raw
            .iter()
            .find(|t| t.name() == entry.name)
            .ok_or_else(|| RunError::Data(format!("model produced no output named '{}'", entry.name)))?;
        let t = t.reorder_axes(&entry.axes).map_err(|e| {
            RunError::Data(format!("output '{}' axes '{}' vs '{}': {e}", entry.name, t.axes(), entry.axes))
        })?;
        out.push((i, t));
    }
    Ok(out)
}

fn postprocess(entry: &TensorSpecEntry, t: &Tensor, ctx: &mut ProcContext) -> Result<Tensor, RunError> {
    Ok(apply_chain(&entry.processing, t, entry.data_type, ctx)?)
}

/// Run the full pipeline on in-memory tensors.
pub fn predict(
    descriptor: &ModelDescriptor,
    inputs: Vec<Tensor>,
    executor: &mut dyn Executor,
    tiling: &Tiling,
) -> Result<Vec<Tensor>, RunError> {
    let inputs = match_inputs(descriptor, inputs)?;
    let mut ctx = ProcContext::new();
    let mut prepared = Vec::with_capacity(inputs.len());
    for (entry, t) in descriptor.inputs.iter().zip(&inputs) {
        prepared.push(apply_chain(&entry.processing, t, entry.data_type, &mut ctx)?);
    }

    let extents = match tiling {
        Tiling::Off => None,
        Tiling::Auto => {
            let e = default_extents(prepared[0].axes(), prepared[0].shape());
            (!e.is_empty()).then_some(e)
        }
        Tiling::Extents(e) => Some(e.clone()),
    };
    let raw = match extents {
        None => executor.infer(prepared)?,
        Some(extents) => {
            let (halo, scale) = tiling_law(descriptor)?;
            let plan = plan_tiles(prepared[0].shape(), prepared[0].axes(), &extents, &halo, &scale)?;
            log::info!("tiling: {plan}");
            run_tiled(|_, tile| executor.infer(tile), &prepared, &plan, &descriptor.outputs).map_err(
                |e| match e {
                    TiledRunError::Tiling(t) => t.into(),
                    TiledRunError::Infer { source, .. } => source,
                },
            )?
        }
    };

    let mut results = Vec::with_capacity(descriptor.outputs.len());
    for (i, t) in collect_outputs(descriptor, raw)? {
        results.push(postprocess(&descriptor.outputs[i], &t, &mut ctx)?);
    }
    Ok(results)
}

/// Where engines come from and how workers are started.
pub struct Environment<'a> {
    pub registry: EngineRegistry,
    pub engines_dir: PathBuf,
    pub platform: Platform,
    pub fetcher: &'a dyn Fetcher,
    pub session: SessionConfig,
    pub allow_install: bool,
}

fn verify_weights(model_dir: &Path, source: &str, expected: &str) -> Result<(), RunError> {
    let path = model_dir.join(source);
    let sha = fsutil::sha256_file(&path).map_err(|e| RunError::io(&path, e))?;
    if sha != expected {
        return Err(RunError::Integrity(format!(
            "weights file {source}: sha256 {sha} does not match descriptor ({expected})"
        )));
    }
    Ok(())
}

/// Choose and (if allowed) install an engine, then open a worker session.
pub fn open_model(env: &Environment, model_dir: &Path, descriptor: &ModelDescriptor) -> Result<ModelSession, RunError> {
    let installed = list_installed(&env.engines_dir).engines;
    let choice = engine_for_model(descriptor, &installed, &env.registry, &env.platform)?;
    let weights = descriptor.weights_for(choice.format).expect("chosen format is declared");
    verify_weights(model_dir, &weights.source, &weights.sha256)?;
    let engine = if choice.install_needed {
        if !env.allow_install {
            return Err(RunError::Engine(EngineError::NoCompatibleEngine {
                framework: choice.spec.framework.to_string(),
                requested: choice.spec.version.to_string(),
                candidates: vec![format!("{} (not installed, installs disabled)", choice.spec)],
            }));
        }
        log::info!("installing engine {}", choice.spec);
        install_engine(&choice.spec, &env.engines_dir, env.fetcher)?
    } else {
        installed
            .into_iter()
            .find(|e| e.spec.same_build(&choice.spec))
            .expect("chosen engine is installed")
    };
    Ok(open_session(&engine, model_dir, choice.format, env.session.clone())?)
}

/// Run a model directory on tensors through a worker.
pub fn run_model(
    env: &Environment,
    model_dir: &Path,
    inputs: Vec<Tensor>,
    tiling: &Tiling,
) -> Result<Vec<Tensor>, RunError> {
    let descriptor = load_descriptor(model_dir)?;
    let mut session = open_model(env, model_dir, &descriptor)?;
    let result = predict(&descriptor, inputs, &mut session, tiling);
    session.close();
    result
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OutputVerdict {
    pub name: String,
    pub dtype: String,
    /// `None` when shapes or axes differ.
    pub max_abs_diff: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TestReport {
    pub model: String,
    pub outputs: Vec<OutputVerdict>,
}

impl TestReport {
    pub fn passed(&self) -> bool {
        self.outputs.iter().all(|o| o.passed)
    }
}

/// Largest absolute elementwise difference; NaN matches only NaN.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Option<f64> {
    if a.axes() != b.axes() || a.shape() != b.shape() {
        return None;
    }
    let worst = a
        .to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(&x, y)| match (x.is_nan(), y.is_nan()) {
            (true, true) => 0.0,
            (false, false) if x == y => 0.0,
            (false, false) => (x - y).abs(),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    Some(worst)
}

/// Compare an output with its expected tensor: bit-exact for integers,
/// within [`FLOAT_TOLERANCE`] for floats.
pub fn verdict(name: &str, actual: &Tensor, expected: &Tensor) -> OutputVerdict {
    let diff = max_abs_diff(actual, expected);
    let passed = actual.dtype() == expected.dtype()
        && match diff {
            None => false,
            Some(_) if !expected.dtype().is_float() => actual.bytes() == expected.bytes(),
            Some(d) => d <= FLOAT_TOLERANCE,
        };
    OutputVerdict {
        name: name.to_string(),
        dtype: expected.dtype().to_string(),
        max_abs_diff: diff,
        passed,
    }
}

fn load_test_tensor(model_dir: &Path, t: &crate::model_spec::TestTensorRef) -> Result<Tensor, RunError> {
    let path = model_dir.join(&t.source);
    if let Some(expected) = &t.sha256 {
        let sha = fsutil::sha256_file(&path).map_err(|e| RunError::io(&path, e))?;
        if &sha != expected {
            return Err(RunError::Integrity(format!(
                "test tensor {}: sha256 {sha} does not match descriptor",
                t.source
            )));
        }
    }
    Ok(read_zrt_file(&path)?)
}

/// Bundled test tensors of a model: inputs and expected outputs.
pub fn load_test_tensors(model_dir: &Path, descriptor: &ModelDescriptor) -> Result<(Vec<Tensor>, Vec<Tensor>), RunError> {
    if descriptor.test_inputs.is_empty() || descriptor.test_outputs.is_empty() {
        return Err(RunError::Usage(format!(
            "model '{}' bundles no test tensors, nothing to test",
            descriptor.name
        )));
    }
    let inputs = descriptor
        .test_inputs
        .iter()
        .map(|t| load_test_tensor(model_dir, t))
        .collect::<Result<_, _>>()?;
    let outputs = descriptor
        .test_outputs
        .iter()
        .map(|t| load_test_tensor(model_dir, t))
        .collect::<Result<_, _>>()?;
    Ok((inputs, outputs))
}

/// Compare pipeline outputs with expected tensors, pairing by position.
pub fn compare_outputs(descriptor: &ModelDescriptor, actual: &[Tensor], expected: &[Tensor]) -> TestReport {
    let outputs = descriptor
        .outputs
        .iter()
        .enumerate()
        .map(|(i, entry)| match (actual.get(i), expected.get(i)) {
            (Some(a), Some(e)) => verdict(&entry.name, a, e),
            _ => OutputVerdict {
                name: entry.name.clone(),
                dtype: entry.data_type.to_string(),
                max_abs_diff: None,
                passed: false,
            },
        })
        .collect();
    TestReport {
        model: descriptor.name.clone(),
        outputs,
    }
}

/// Run a model on its bundled test inputs and compare with its bundled
/// expected outputs.
pub fn test_model(env: &Environment, model_dir: &Path) -> Result<TestReport, RunError> {
    let descriptor = load_descriptor(model_dir)?;
    let (inputs, expected) = load_test_tensors(model_dir, &descriptor)?;
    let mut session = open_model(env, model_dir, &descriptor)?;
    let actual = predict(&descriptor, inputs, &mut session, &Tiling::Auto);
    session.close();
    Ok(compare_outputs(&descriptor, &actual?, &expected))
}
