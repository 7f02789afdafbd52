//! Inference backends hosted by the worker, registered by weights format.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use crate::reference_engine::{parse_graph, run_graph, RefGraph};
use crate::tensor::Tensor;

/// Loads weights of one format into a runnable model.
pub trait InferenceBackend: Send + Sync + Debug {
    fn weights_format(&self) -> &'static str;
    fn load(&self, weights: &Path) -> Result<Box<dyn LoadedModel>, String>;
}

pub trait LoadedModel: Send {
    fn run(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>, String>;
}

#[derive(Debug)]
pub struct ReferenceGraphBackend;

struct ReferenceModel(RefGraph);

impl InferenceBackend for ReferenceGraphBackend {
    fn weights_format(&self) -> &'static str {
        "reference_graph"
    }

    fn load(&self, weights: &Path) -> Result<Box<dyn LoadedModel>, String> {
        let text = fs::read_to_string(weights).map_err(|e| format!("{}: {e}", weights.display()))?;
        let graph = parse_graph(&text).map_err(|e| e.to_string())?;
        Ok(Box::new(ReferenceModel(graph)))
    }
}

impl LoadedModel for ReferenceModel {
    fn run(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>, String> {
        run_graph(&self.0, &inputs).map_err(|e| e.to_string())
    }
}

static BACKENDS: LazyLock<BTreeMap<&'static str, Box<dyn InferenceBackend>>> = LazyLock::new(|| {
    let backends: Vec<Box<dyn InferenceBackend>> = vec![Box::new(ReferenceGraphBackend)];
    backends.into_iter().map(|b| (b.weights_format(), b)).collect()
});

pub fn backend_for(weights_format: &str) -> Option<&'static dyn InferenceBackend> {
    BACKENDS.get(weights_format).map(|b| b.as_ref())
}

pub fn registered_backends() -> impl Iterator<Item = &'static str> {
    BACKENDS.keys().copied()
}
