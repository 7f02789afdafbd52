use std::collections::{BTreeMap, HashSet};

use serde_yaml::{Mapping, Value};

use super::{
    is_sha256, ModelDescriptor, Scale, ShapeRule, SpecError, TensorSpecEntry, TestTensorRef,
    WeightsEntry, WeightsFormat,
};
use crate::processing::{build_step, KwArg, Mode, ProcStep, ProcessingError};
use crate::tensor::{Axes, DType};

const TOP_LEVEL: &[&str] = &[
    "format_version",
    "name",
    "weights",
    "inputs",
    "outputs",
    "test_inputs",
    "test_outputs",
];
const WEIGHTS_FIELDS: &[&str] = &["source", "sha256", "engine_version"];
const INPUT_FIELDS: &[&str] = &[
    "name",
    "description",
    "axes",
    "data_type",
    "data_range",
    "shape",
    "preprocessing",
];
const OUTPUT_FIELDS: &[&str] = &[
    "name",
    "description",
    "axes",
    "data_type",
    "data_range",
    "shape",
    "halo",
    "postprocessing",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Input,
    Output,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn index(path: &str, i: usize) -> String {
    format!("{path}[{i}]")
}

fn describe(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Sequence(_) => "a list",
        Value::Mapping(_) => "a mapping",
        Value::Tagged(_) => "a tagged value",
    }
}

fn as_map<'a>(v: &'a Value, path: &str) -> Result<&'a Mapping, SpecError> {
    v.as_mapping().ok_or_else(|| {
        SpecError::schema(display(path), format!("expected a mapping, found {}", describe(v)))
    })
}

fn as_seq<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, SpecError> {
    v.as_sequence()
        .ok_or_else(|| SpecError::schema(path, format!("expected a list, found {}", describe(v))))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, SpecError> {
    v.as_str()
        .ok_or_else(|| SpecError::schema(path, format!("expected a string, found {}", describe(v))))
}

fn as_f64(v: &Value, path: &str) -> Result<f64, SpecError> {
    match v.as_f64() {
        Some(f) if !f.is_nan() => Ok(f),
        _ => Err(SpecError::schema(path, format!("expected a number, found {}", describe(v)))),
    }
}

fn as_usize(v: &Value, path: &str) -> Result<usize, SpecError> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| SpecError::schema(path, "expected a non-negative integer"))
}

fn usize_list(v: &Value, path: &str) -> Result<Vec<usize>, SpecError> {
    as_seq(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_usize(x, &index(path, i)))
        .collect()
}

fn display(path: &str) -> &str {
    if path.is_empty() {
        "<root>"
    } else {
        path
    }
}

/// String-keyed view of a mapping that remembers its path.
struct Fields<'a> {
    path: String,
    entries: Vec<(&'a str, &'a Value)>,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Value, path: &str) -> Result<Fields<'a>, SpecError> {
        let map = as_map(v, path)?;
        let mut entries = Vec::with_capacity(map.len());
        for (k, v) in map {
            let key = k
                .as_str()
                .ok_or_else(|| SpecError::schema(display(path), "mapping keys must be strings"))?;
            entries.push((key, v));
        }
        Ok(Fields {
            path: path.to_string(),
            entries,
        })
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn req(&self, key: &str) -> Result<&'a Value, SpecError> {
        self.get(key)
            .ok_or_else(|| SpecError::schema(self.at(key), "required field is missing"))
    }

    fn deny_unknown(&self, allowed: &[&str]) -> Result<(), SpecError> {
        match self.entries.iter().find(|(k, _)| !allowed.contains(k)) {
            Some((k, _)) => Err(SpecError::schema(self.at(k), "unknown field")),
            None => Ok(()),
        }
    }

    fn unknown(&self, allowed: &[&str]) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(k, _)| !allowed.contains(k))
            .map(|(k, _)| self.at(k))
            .collect()
    }
}

/// Parse and validate a descriptor document.
pub fn parse_model_descriptor(text: &str) -> Result<ModelDescriptor, SpecError> {
    let (descriptor, warnings) = parse_model_descriptor_with_warnings(text)?;
    for w in warnings {
        log::warn!("ignoring unknown descriptor field '{w}'");
    }
    Ok(descriptor)
}

/// Like [`parse_model_descriptor`], also returning the paths of ignored
/// top-level fields.
pub fn parse_model_descriptor_with_warnings(
    text: &str,
) -> Result<(ModelDescriptor, Vec<String>), SpecError> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
    let top = Fields::new(&doc, "")?;
    let warnings = top.unknown(TOP_LEVEL);

    let name = as_str(top.req("name")?, "name")?.to_string();
    if name.trim().is_empty() {
        return Err(SpecError::schema("name", "must not be empty"));
    }
    let format_version = match top.req("format_version")? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        other => {
            return Err(SpecError::schema(
                "format_version",
                format!("expected a string, found {}", describe(other)),
            ))
        }
    };
    let weights = parse_weights(top.req("weights")?)?;
    let inputs = parse_entries(top.req("inputs")?, "inputs", Role::Input)?;
    let outputs = parse_entries(top.req("outputs")?, "outputs", Role::Output)?;

    for (i, out) in outputs.iter().enumerate() {
        if let ShapeRule::Implicit {
            reference_input, ..
        } = &out.shape
        {
            let path = format!("outputs[{i}].shape.reference_tensor");
            let reference = inputs
                .iter()
                .find(|e| &e.name == reference_input)
                .ok_or_else(|| {
                    SpecError::schema(&path, format!("no input named '{reference_input}'"))
                })?;
            if reference.axes.len() != out.axes.len() {
                return Err(SpecError::schema(
                    path,
                    format!(
                        "reference input '{reference_input}' has rank {}, output has rank {}",
                        reference.axes.len(),
                        out.axes.len()
                    ),
                ));
            }
        }
    }

    let test_inputs = parse_test_tensors(top.get("test_inputs"), "test_inputs")?;
    let test_outputs = parse_test_tensors(top.get("test_outputs"), "test_outputs")?;
    if !test_inputs.is_empty() && test_inputs.len() != inputs.len() {
        return Err(SpecError::schema(
            "test_inputs",
            format!("{} test inputs for {} inputs", test_inputs.len(), inputs.len()),
        ));
    }
    if test_outputs.len() != outputs.len() && !(test_outputs.is_empty() && test_inputs.is_empty()) {
        return Err(SpecError::schema(
            "test_outputs",
            format!("{} test outputs for {} outputs", test_outputs.len(), outputs.len()),
        ));
    }
    if test_inputs.is_empty() && !test_outputs.is_empty() {
        return Err(SpecError::schema("test_inputs", "test outputs given without test inputs"));
    }

    Ok((
        ModelDescriptor {
            name,
            format_version,
            weights,
            inputs,
            outputs,
            test_inputs,
            test_outputs,
        },
        warnings,
    ))
}

fn parse_sha(v: &Value, path: &str) -> Result<String, SpecError> {
    let s = as_str(v, path)?;
    if !is_sha256(s) {
        return Err(SpecError::schema(path, "expected 64 lowercase hex characters"));
    }
    Ok(s.to_string())
}

fn parse_source(v: &Value, path: &str) -> Result<String, SpecError> {
    let s = as_str(v, path)?;
    if s.is_empty() {
        return Err(SpecError::schema(path, "must not be empty"));
    }
    Ok(s.to_string())
}

fn parse_weights(v: &Value) -> Result<Vec<WeightsEntry>, SpecError> {
    let fields = Fields::new(v, "weights")?;
    if fields.entries.is_empty() {
        return Err(SpecError::schema("weights", "at least one weights entry is required"));
    }
    let mut out = Vec::new();
    for (tag, value) in &fields.entries {
        let path = fields.at(tag);
        let format: WeightsFormat = tag.parse().map_err(|m: String| SpecError::schema(&path, m))?;
        let entry = Fields::new(value, &path)?;
        entry.deny_unknown(WEIGHTS_FIELDS)?;
        let source = parse_source(entry.req("source")?, &entry.at("source"))?;
        let sha256 = parse_sha(entry.req("sha256")?, &entry.at("sha256"))?;
        let engine_version_hint = match entry.get("engine_version") {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            Some(other) => {
                return Err(SpecError::schema(
                    entry.at("engine_version"),
                    format!("expected a version string, found {}", describe(other)),
                ))
            }
        };
        out.push(WeightsEntry {
            format,
            source,
            sha256,
            engine_version_hint,
        });
    }
    Ok(out)
}

fn parse_entries(v: &Value, path: &str, role: Role) -> Result<Vec<TensorSpecEntry>, SpecError> {
    let items = as_seq(v, path)?;
    if items.is_empty() {
        return Err(SpecError::schema(path, "at least one tensor is required"));
    }
    let mut names = HashSet::new();
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let entry = parse_entry(item, &index(path, i), role)?;
        if !names.insert(entry.name.clone()) {
            return Err(SpecError::schema(
                format!("{path}[{i}].name"),
                format!("duplicate tensor name '{}'", entry.name),
            ));
        }
        out.push(entry);
    }
    Ok(out)
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn parse_entry(v: &Value, path: &str, role: Role) -> Result<TensorSpecEntry, SpecError> {
    let f = Fields::new(v, path)?;
    if role == Role::Input && f.get("halo").is_some() {
        return Err(SpecError::schema(f.at("halo"), "halo is only allowed on outputs"));
    }
    f.deny_unknown(match role {
        Role::Input => INPUT_FIELDS,
        Role::Output => OUTPUT_FIELDS,
    })?;
    if let Some(d) = f.get("description") {
        as_str(d, &f.at("description"))?;
    }

    let name = as_str(f.req("name")?, &f.at("name"))?.to_string();
    if !valid_identifier(&name) {
        return Err(SpecError::schema(f.at("name"), format!("'{name}' is not a valid identifier")));
    }
    let axes: Axes = as_str(f.req("axes")?, &f.at("axes"))?
        .parse()
        .map_err(|e: crate::tensor::TensorError| SpecError::schema(f.at("axes"), e.to_string()))?;
    let data_type: DType = as_str(f.req("data_type")?, &f.at("data_type"))?
        .parse()
        .map_err(|e: crate::tensor::TensorError| SpecError::schema(f.at("data_type"), e.to_string()))?;
    let data_range = match f.get("data_range") {
        None => None,
        Some(r) => {
            let p = f.at("data_range");
            let items = as_seq(r, &p)?;
            if items.len() != 2 {
                return Err(SpecError::schema(p, "expected [lo, hi]"));
            }
            let lo = as_f64(&items[0], &index(&p, 0))?;
            let hi = as_f64(&items[1], &index(&p, 1))?;
            if lo > hi {
                return Err(SpecError::schema(p, format!("lo {lo} exceeds hi {hi}")));
            }
            Some((lo, hi))
        }
    };
    let shape = parse_shape(f.req("shape")?, &f.at("shape"), role, axes.len())?;
    let halo = match f.get("halo") {
        None => None,
        Some(h) => {
            let halo = usize_list(h, &f.at("halo"))?;
            if halo.len() != axes.len() {
                return Err(SpecError::schema(
                    f.at("halo"),
                    format!("{} values for {} axes", halo.len(), axes.len()),
                ));
            }
            Some(halo)
        }
    };
    let proc_key = match role {
        Role::Input => "preprocessing",
        Role::Output => "postprocessing",
    };
    let known_shape = match &shape {
        ShapeRule::Explicit(s) => Some(s.as_slice()),
        _ => None,
    };
    let processing = match f.get(proc_key) {
        None => Vec::new(),
        Some(p) => parse_steps(p, &f.at(proc_key), &axes, known_shape)?,
    };
    Ok(TensorSpecEntry {
        name,
        axes,
        shape,
        data_type,
        data_range,
        halo,
        processing,
    })
}

fn check_rank(len: usize, rank: usize, path: &str) -> Result<(), SpecError> {
    if len != rank {
        return Err(SpecError::schema(path, format!("{len} values for {rank} axes")));
    }
    Ok(())
}

fn parse_scale(v: &Value, path: &str) -> Result<Scale, SpecError> {
    let f = as_f64(v, path)?;
    if !(f >= 0.0 && f.is_finite()) {
        return Err(SpecError::schema(path, "scale must be finite and non-negative"));
    }
    let ratio = Scale::approximate_float(f)
        .filter(|r| *r.numer() as f64 / *r.denom() as f64 == f)
        .ok_or_else(|| SpecError::schema(path, format!("{f} is not a representable ratio")))?;
    Ok(ratio)
}

fn parse_shape(v: &Value, path: &str, role: Role, rank: usize) -> Result<ShapeRule, SpecError> {
    if v.is_sequence() {
        let sizes = usize_list(v, path)?;
        check_rank(sizes.len(), rank, path)?;
        return Ok(ShapeRule::Explicit(sizes));
    }
    let f = Fields::new(v, path)?;
    if f.get("min").is_some() || f.get("step").is_some() {
        if role == Role::Output {
            return Err(SpecError::schema(path, "min/step shapes are only allowed on inputs"));
        }
        f.deny_unknown(&["min", "step"])?;
        let min = usize_list(f.req("min")?, &f.at("min"))?;
        let step = usize_list(f.req("step")?, &f.at("step"))?;
        check_rank(min.len(), rank, &f.at("min"))?;
        check_rank(step.len(), rank, &f.at("step"))?;
        for (i, (&m, &s)) in min.iter().zip(&step).enumerate() {
            if s == 0 && m < 1 {
                return Err(SpecError::schema(
                    index(&f.at("min"), i),
                    "fixed axes (step 0) need min >= 1",
                ));
            }
        }
        return Ok(ShapeRule::Parameterized { min, step });
    }
    if f.get("reference_tensor").is_some() || f.get("scale").is_some() {
        if role == Role::Input {
            return Err(SpecError::schema(path, "implicit shapes are only allowed on outputs"));
        }
        f.deny_unknown(&["reference_tensor", "scale", "offset"])?;
        let reference_input = as_str(f.req("reference_tensor")?, &f.at("reference_tensor"))?.to_string();
        let scale_path = f.at("scale");
        let scale = as_seq(f.req("scale")?, &scale_path)?
            .iter()
            .enumerate()
            .map(|(i, s)| parse_scale(s, &index(&scale_path, i)))
            .collect::<Result<Vec<_>, _>>()?;
        check_rank(scale.len(), rank, &scale_path)?;
        let offset = match f.get("offset") {
            Some(o) => usize_list(o, &f.at("offset"))?,
            None => vec![0; rank],
        };
        check_rank(offset.len(), rank, &f.at("offset"))?;
        for (i, (s, &o)) in scale.iter().zip(&offset).enumerate() {
            if *s.numer() == 0 && o == 0 {
                return Err(SpecError::schema(
                    index(&scale_path, i),
                    "zero scale needs a positive offset",
                ));
            }
        }
        return Ok(ShapeRule::Implicit {
            reference_input,
            scale,
            offset,
        });
    }
    Err(SpecError::schema(
        path,
        "expected a size list, {min, step} or {reference_tensor, scale, offset}",
    ))
}

fn parse_kwarg(v: &Value, path: &str) -> Result<KwArg, SpecError> {
    match v {
        Value::Number(_) => Ok(KwArg::Number(as_f64(v, path)?)),
        Value::String(s) => Ok(KwArg::Text(s.clone())),
        Value::Sequence(items) => items
            .iter()
            .enumerate()
            .map(|(i, x)| as_f64(x, &index(path, i)))
            .collect::<Result<Vec<_>, _>>()
            .map(KwArg::List),
        other => Err(SpecError::schema(
            path,
            format!("unsupported kwarg value: {}", describe(other)),
        )),
    }
}

fn parse_steps(
    v: &Value,
    path: &str,
    axes: &Axes,
    shape: Option<&[usize]>,
) -> Result<Vec<ProcStep>, SpecError> {
    let mut steps = Vec::new();
    for (i, item) in as_seq(v, path)?.iter().enumerate() {
        let sp = index(path, i);
        let f = Fields::new(item, &sp)?;
        f.deny_unknown(&["name", "kwargs"])?;
        let name = as_str(f.req("name")?, &f.at("name"))?.to_string();
        let kw_path = f.at("kwargs");
        let mut kwargs = BTreeMap::new();
        if let Some(kw) = f.get("kwargs") {
            let kwf = Fields::new(kw, &kw_path)?;
            for (k, value) in &kwf.entries {
                kwargs.insert(k.to_string(), parse_kwarg(value, &kwf.at(k))?);
            }
        }
        let mode = if ProcStep::takes_mode(&name) {
            match kwargs.remove("mode") {
                None => Mode::PerSample,
                Some(KwArg::Text(m)) => Mode::parse(&m).ok_or_else(|| {
                    SpecError::schema(join(&kw_path, "mode"), format!("unknown mode '{m}'"))
                })?,
                Some(_) => return Err(SpecError::schema(join(&kw_path, "mode"), "expected a string")),
            }
        } else {
            Mode::Fixed
        };
        let step = ProcStep { name, kwargs, mode };
        let processor = build_step(&step).map_err(|e| match e {
            ProcessingError::UnknownStep(n) => {
                SpecError::schema(f.at("name"), format!("unknown processing step '{n}'"))
            }
            ProcessingError::Kwargs { source, .. } => SpecError::schema(
                match &source.key {
                    Some(k) => join(&kw_path, k),
                    None => kw_path.clone(),
                },
                source.message,
            ),
            other => SpecError::schema(&sp, other.to_string()),
        })?;
        processor
            .check_layout(axes, shape)
            .map_err(|m| SpecError::schema(&kw_path, m))?;
        steps.push(step);
    }
    Ok(steps)
}

fn parse_test_tensors(v: Option<&Value>, path: &str) -> Result<Vec<TestTensorRef>, SpecError> {
    let Some(v) = v else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for (i, item) in as_seq(v, path)?.iter().enumerate() {
        let p = index(path, i);
        out.push(match item {
            Value::String(_) => TestTensorRef {
                source: parse_source(item, &p)?,
                sha256: None,
            },
            _ => {
                let f = Fields::new(item, &p)?;
                f.deny_unknown(&["source", "sha256"])?;
                TestTensorRef {
                    source: parse_source(f.req("source")?, &f.at("source"))?,
                    sha256: f.get("sha256").map(|s| parse_sha(s, &f.at("sha256"))).transpose()?,
                }
            }
        });
    }
    Ok(out)
}
