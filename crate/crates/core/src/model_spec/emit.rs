use serde_yaml::{Mapping, Value};

use super::{ModelDescriptor, Scale, ShapeRule, TensorSpecEntry, TestTensorRef};
use crate::processing::{KwArg, ProcStep};

fn sorted(mut pairs: Vec<(&str, Value)>) -> Value {
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    let mut map = Mapping::new();
    for (k, v) in pairs {
        map.insert(Value::String(k.to_string()), v);
    }
    Value::Mapping(map)
}

fn text(s: &str) -> Value {
    Value::String(s.to_string())
}

fn uint(n: usize) -> Value {
    Value::Number((n as u64).into())
}

fn float(f: f64) -> Value {
    Value::Number(f.into())
}

fn uints(v: &[usize]) -> Value {
    Value::Sequence(v.iter().map(|&n| uint(n)).collect())
}

fn scale(s: &Scale) -> Value {
    if s.is_integer() {
        Value::Number((*s.numer()).into())
    } else {
        float(*s.numer() as f64 / *s.denom() as f64)
    }
}

fn kwarg(k: &KwArg) -> Value {
    match k {
        KwArg::Number(f) => float(*f),
        KwArg::List(v) => Value::Sequence(v.iter().map(|&f| float(f)).collect()),
        KwArg::Text(s) => text(s),
    }
}

fn step(s: &ProcStep) -> Value {
    let mut kwargs: Vec<(&str, Value)> = s.kwargs.iter().map(|(k, v)| (k.as_str(), kwarg(v))).collect();
    if ProcStep::takes_mode(&s.name) {
        kwargs.push(("mode", text(s.mode.as_str())));
    }
    let mut pairs = vec![("name", text(&s.name))];
    if !kwargs.is_empty() {
        pairs.push(("kwargs", sorted(kwargs)));
    }
    sorted(pairs)
}

fn entry(e: &TensorSpecEntry, proc_key: &'static str) -> Value {
    let shape = match &e.shape {
        ShapeRule::Explicit(s) => uints(s),
        ShapeRule::Parameterized { min, step } => sorted(vec![("min", uints(min)), ("step", uints(step))]),
        ShapeRule::Implicit {
            reference_input,
            scale: sc,
            offset,
        } => sorted(vec![
            ("reference_tensor", text(reference_input)),
            ("scale", Value::Sequence(sc.iter().map(scale).collect())),
            ("offset", uints(offset)),
        ]),
    };
    let mut pairs = vec![
        ("name", text(&e.name)),
        ("axes", text(&e.axes.to_string())),
        ("data_type", text(e.data_type.as_str())),
        ("shape", shape),
    ];
    if let Some((lo, hi)) = e.data_range {
        pairs.push(("data_range", Value::Sequence(vec![float(lo), float(hi)])));
    }
    if let Some(h) = &e.halo {
        pairs.push(("halo", uints(h)));
    }
    if !e.processing.is_empty() {
        pairs.push((proc_key, Value::Sequence(e.processing.iter().map(step).collect())));
    }
    sorted(pairs)
}

fn test_tensor(t: &TestTensorRef) -> Value {
    let mut pairs = vec![("source", text(&t.source))];
    if let Some(sha) = &t.sha256 {
        pairs.push(("sha256", text(sha)));
    }
    sorted(pairs)
}

/// Serialize a descriptor with sorted keys.
///
/// The `weights` mapping keeps descriptor order, which carries the model
/// author's format preference.
pub fn to_canonical_yaml(d: &ModelDescriptor) -> String {
    let mut weights = Mapping::new();
    for w in &d.weights {
        let mut pairs = vec![("source", text(&w.source)), ("sha256", text(&w.sha256))];
        if let Some(h) = &w.engine_version_hint {
            pairs.push(("engine_version", text(h)));
        }
        weights.insert(text(w.format.as_str()), sorted(pairs));
    }
    let mut pairs = vec![
        ("format_version", text(&d.format_version)),
        ("name", text(&d.name)),
        ("weights", Value::Mapping(weights)),
        (
            "inputs",
            Value::Sequence(d.inputs.iter().map(|e| entry(e, "preprocessing")).collect()),
        ),
        (
            "outputs",
            Value::Sequence(d.outputs.iter().map(|e| entry(e, "postprocessing")).collect()),
        ),
    ];
    if !d.test_inputs.is_empty() {
        pairs.push(("test_inputs", Value::Sequence(d.test_inputs.iter().map(test_tensor).collect())));
    }
    if !d.test_outputs.is_empty() {
        pairs.push(("test_outputs", Value::Sequence(d.test_outputs.iter().map(test_tensor).collect())));
    }
    serde_yaml::to_string(&sorted(pairs)).expect("descriptor serializes")
}
