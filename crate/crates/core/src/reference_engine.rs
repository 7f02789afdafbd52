//! Deterministic interpreted op-graph engine behind the `reference_graph`
//! weights format.
//!
//! A graph is a JSON document listing its inputs, outputs and an ordered
//! chain of ops. All arithmetic runs in f64 with a fixed evaluation order
//! and outputs are cast to their declared dtype, so results are
//! reproducible bit for bit on every platform.
//!
//! ```json
//! {
//!   "inputs":  [{"name": "input", "axes": "byxc", "dtype": "float32"}],
//!   "outputs": [{"name": "output", "dtype": "float32"}],
//!   "ops": [{"op": "blur3", "input": "input", "output": "output"}]
//! }
//! ```

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::processing::Sigmoid;
use crate::tensor::{for_each_index, strides, Axes, Axis, DType, Tensor, TensorError};

/// Weights file name inside a model directory.
pub const GRAPH_FILE: &str = "weights.refgraph";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Parse(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("avgpool2 needs even spatial sizes, axis '{axis}' has size {size}")]
    OddSize { axis: char, size: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Scalar or per-channel op parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(f64),
    Channels(Vec<f64>),
}

impl Param {
    fn get(&self, channel: usize) -> f64 {
        match self {
            Param::Scalar(v) => *v,
            Param::Channels(v) => v[channel],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    Affine { a: Param, b: Param },
    Relu,
    Sigmoid,
    Avgpool2,
    Upsample2,
    Blur3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefOp {
    #[serde(flatten)]
    pub kind: OpKind,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphInput {
    pub name: String,
    pub axes: Axes,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphOutput {
    pub name: String,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefGraph {
    pub inputs: Vec<GraphInput>,
    pub outputs: Vec<GraphOutput>,
    pub ops: Vec<RefOp>,
}

impl RefGraph {
    /// Check that every op reads a tensor that already exists and every
    /// declared output is produced.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.inputs.is_empty() || self.outputs.is_empty() {
            return Err(GraphError::Graph("graph needs at least one input and one output".into()));
        }
        let mut known: HashSet<&str> = HashSet::new();
        for i in &self.inputs {
            if !known.insert(&i.name) {
                return Err(GraphError::Graph(format!("duplicate graph input '{}'", i.name)));
            }
        }
        for (n, op) in self.ops.iter().enumerate() {
            if !known.contains(op.input.as_str()) {
                return Err(GraphError::Graph(format!(
                    "op {n} reads undefined tensor '{}'",
                    op.input
                )));
            }
            if !known.insert(&op.output) {
                return Err(GraphError::Graph(format!(
                    "op {n} redefines tensor '{}'",
                    op.output
                )));
            }
        }
        for o in &self.outputs {
            if !known.contains(o.name.as_str()) {
                return Err(GraphError::Graph(format!("output '{}' is never produced", o.name)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

pub fn parse_graph(text: &str) -> Result<RefGraph, GraphError> {
    let graph: RefGraph = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    graph.validate()?;
    Ok(graph)
}

/// f64 working tensor.
#[derive(Debug, Clone)]
struct Plane {
    axes: Axes,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Plane {
    fn spatial(&self, op: &str) -> Result<(usize, usize), GraphError> {
        match (self.axes.position(Axis::Y), self.axes.position(Axis::X)) {
            (Some(y), Some(x)) => Ok((y, x)),
            _ => Err(GraphError::Graph(format!(
                "{op} needs y and x axes, tensor has '{}'",
                self.axes
            ))),
        }
    }

    /// Apply `f(src, dst, sy, sx)` to every yx plane. `src`/`dst` are the
    /// flat offsets of the plane origin in the input and output buffers.
    fn map_planes(
        &self,
        (ya, xa): (usize, usize),
        out_shape: &[usize],
        mut f: impl FnMut(usize, usize),
    ) {
        let mut outer = self.shape.clone();
        outer[ya] = 1;
        outer[xa] = 1;
        let in_strides = strides(&self.shape);
        let out_strides = strides(out_shape);
        for_each_index(&outer, |idx| {
            let src: usize = idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum();
            let dst: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            f(src, dst);
        });
    }
}

fn affine(p: &Plane, a: &Param, b: &Param) -> Result<Plane, GraphError> {
    let per_channel = matches!(a, Param::Channels(_)) || matches!(b, Param::Channels(_));
    let chan_of: Box<dyn Fn(usize) -> usize> = match per_channel {
        false => Box::new(|_| 0),
        true => {
            let c = p.axes.position(Axis::Channel).ok_or_else(|| {
                GraphError::Graph(format!("per-channel affine needs a 'c' axis, tensor has '{}'", p.axes))
            })?;
            for param in [a, b] {
                if let Param::Channels(v) = param {
                    if v.len() != p.shape[c] {
                        return Err(GraphError::Graph(format!(
                            "affine has {} values for {} channels",
                            v.len(),
                            p.shape[c]
                        )));
                    }
                }
            }
            let stride = strides(&p.shape)[c];
            let size = p.shape[c];
            Box::new(move |i| (i / stride) % size)
        }
    };
    let data = p
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = chan_of(i);
            a.get(c) * x + b.get(c)
        })
        .collect();
    Ok(Plane {
        data,
        ..p.clone()
    })
}

fn avgpool2(p: &Plane) -> Result<Plane, GraphError> {
    let (ya, xa) = p.spatial("avgpool2")?;
    for (axis, a) in [(ya, 'y'), (xa, 'x')] {
        if !p.shape[axis].is_multiple_of(2) {
            return Err(GraphError::OddSize {
                axis: a,
                size: p.shape[axis],
            });
        }
    }
    let mut shape = p.shape.clone();
    shape[ya] /= 2;
    shape[xa] /= 2;
    let (h, w) = (shape[ya], shape[xa]);
    let (isy, isx) = (strides(&p.shape)[ya], strides(&p.shape)[xa]);
    let (osy, osx) = (strides(&shape)[ya], strides(&shape)[xa]);
    let mut data = vec![0.0; shape.iter().product()];
    p.map_planes((ya, xa), &shape, |src, dst| {
        for y in 0..h {
            for x in 0..w {
                let o = src + 2 * y * isy + 2 * x * isx;
                let sum = p.data[o] + p.data[o + isx] + p.data[o + isy] + p.data[o + isy + isx];
                data[dst + y * osy + x * osx] = sum / 4.0;
            }
        }
    });
    Ok(Plane {
        axes: p.axes.clone(),
        shape,
        data,
    })
}

fn upsample2(p: &Plane) -> Result<Plane, GraphError> {
    let (ya, xa) = p.spatial("upsample2")?;
    let mut shape = p.shape.clone();
    shape[ya] *= 2;
    shape[xa] *= 2;
    let (h, w) = (shape[ya], shape[xa]);
    let (isy, isx) = (strides(&p.shape)[ya], strides(&p.shape)[xa]);
    let (osy, osx) = (strides(&shape)[ya], strides(&shape)[xa]);
    let mut data = vec![0.0; shape.iter().product()];
    p.map_planes((ya, xa), &shape, |src, dst| {
        for y in 0..h {
            for x in 0..w {
                data[dst + y * osy + x * osx] = p.data[src + (y / 2) * isy + (x / 2) * isx];
            }
        }
    });
    Ok(Plane {
        axes: p.axes.clone(),
        shape,
        data,
    })
}

/// 3x3 box mean with edge replication; summation order is row by row.
fn blur3(p: &Plane) -> Result<Plane, GraphError> {
    let (ya, xa) = p.spatial("blur3")?;
    let (h, w) = (p.shape[ya], p.shape[xa]);
    if h == 0 || w == 0 {
        return Err(GraphError::Graph("blur3 needs non-empty y and x axes".into()));
    }
    let (sy, sx) = (strides(&p.shape)[ya], strides(&p.shape)[xa]);
    let mut data = vec![0.0; p.data.len()];
    p.map_planes((ya, xa), &p.shape, |src, dst| {
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for dy in -1isize..=1 {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -1isize..=1 {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        sum += p.data[src + yy * sy + xx * sx];
                    }
                }
                data[dst + y * sy + x * sx] = sum / 9.0;
            }
        }
    });
    Ok(Plane {
        data,
        ..p.clone()
    })
}

fn apply_op(kind: &OpKind, p: &Plane) -> Result<Plane, GraphError> {
    match kind {
        OpKind::Affine { a, b } => affine(p, a, b),
        OpKind::Relu => Ok(Plane {
            data: p.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            ..p.clone()
        }),
        OpKind::Sigmoid => Ok(Plane {
            data: p.data.iter().map(|&x| Sigmoid::eval(x)).collect(),
            ..p.clone()
        }),
        OpKind::Avgpool2 => avgpool2(p),
        OpKind::Upsample2 => upsample2(p),
        OpKind::Blur3 => blur3(p),
    }
}

/// Execute `graph` on tensors named after its declared inputs. Outputs are
/// returned in declaration order.
pub fn run_graph(graph: &RefGraph, inputs: &[Tensor]) -> Result<Vec<Tensor>, GraphError> {
    if inputs.len() != graph.inputs.len() {
        return Err(GraphError::Graph(format!(
            "graph takes {} inputs, got {}",
            graph.inputs.len(),
            inputs.len()
        )));
    }
    let mut env: HashMap<&str, Plane> = HashMap::new();
    for decl in &graph.inputs {
        let t = inputs
            .iter()
            .find(|t| t.name() == decl.name)
            .ok_or_else(|| GraphError::Graph(format!("missing input '{}'", decl.name)))?;
        if t.axes() != &decl.axes {
            return Err(GraphError::Graph(format!(
                "input '{}' has axes '{}', graph expects '{}'",
                decl.name,
                t.axes(),
                decl.axes
            )));
        }
        env.insert(
            &decl.name,
            Plane {
                axes: t.axes().clone(),
                shape: t.shape().to_vec(),
                data: t.to_f64_vec(),
            },
        );
    }
    for op in &graph.ops {
        let src = env
            .get(op.input.as_str())
            .ok_or_else(|| GraphError::Graph(format!("undefined tensor '{}'", op.input)))?;
        let out = apply_op(&op.kind, src)?;
        env.insert(&op.output, out);
    }
    graph
        .outputs
        .iter()
        .map(|o| {
            let p = env
                .get(o.name.as_str())
                .ok_or_else(|| GraphError::Graph(format!("output '{}' is never produced", o.name)))?;
            Ok(Tensor::from_f64s(&o.name, p.axes.clone(), p.shape.clone(), o.dtype, &p.data)?)
        })
        .collect()
}
