use std::fmt;
use std::str::FromStr;

use super::{parse_components, EngineError, EngineRegistry, EngineSpec, Framework, InstalledEngine, Platform, Version};
use crate::model_spec::{weights_formats, ModelDescriptor, WeightsFormat};

/// A requested engine version: full, `major.minor`, `major`, or any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionRequest {
    Exact(Version),
    MajorMinor(u64, u64),
    Major(u64),
    Any,
}

impl FromStr for VersionRequest {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s == "*" {
            return Ok(VersionRequest::Any);
        }
        match parse_components(s).as_deref() {
            Some(&[major]) => Ok(VersionRequest::Major(major)),
            Some(&[major, minor]) => Ok(VersionRequest::MajorMinor(major, minor)),
            Some(&[major, minor, patch]) => Ok(VersionRequest::Exact(Version { major, minor, patch })),
            _ => Err(EngineError::InvalidVersion(s.to_string())),
        }
    }
}

impl fmt::Display for VersionRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VersionRequest::Exact(v) => write!(f, "{v}"),
            VersionRequest::MajorMinor(a, b) => write!(f, "{a}.{b}"),
            VersionRequest::Major(a) => write!(f, "{a}"),
            VersionRequest::Any => f.write_str("*"),
        }
    }
}

/// Which resolution rule admits `version` for `request`, lower is closer.
///
/// 0: exact match. 1: same major.minor. 2: same major. 3: any version
/// (only for unconstrained requests). Within a tier the highest version
/// wins.
pub fn match_tier(request: VersionRequest, version: Version) -> Option<u8> {
    match request {
        VersionRequest::Exact(v) if v == version => Some(0),
        VersionRequest::Exact(Version { major, minor, .. }) | VersionRequest::MajorMinor(major, minor)
            if version.major == major && version.minor == minor =>
        {
            Some(1)
        }
        VersionRequest::Exact(Version { major, .. })
        | VersionRequest::MajorMinor(major, _)
        | VersionRequest::Major(major)
            if version.major == major =>
        {
            Some(2)
        }
        VersionRequest::Any => Some(3),
        _ => None,
    }
}

fn resolve_in<'a>(
    entries: impl Iterator<Item = &'a EngineSpec>,
    framework: Framework,
    request: VersionRequest,
    platform: &Platform,
) -> Option<&'a EngineSpec> {
    entries
        .filter(|e| e.framework == framework && e.supports(platform))
        .filter_map(|e| match_tier(request, e.version).map(|t| (t, e)))
        .min_by(|(ta, a), (tb, b)| ta.cmp(tb).then(b.version.cmp(&a.version)))
        .map(|(_, e)| e)
}

fn nearest_misses(registry: &EngineRegistry, framework: Framework, platform: &Platform) -> Vec<String> {
    let mut same: Vec<&EngineSpec> = registry.entries.iter().filter(|e| e.framework == framework).collect();
    same.sort_by(|a, b| a.version.cmp(&b.version).then(a.dir_name().cmp(&b.dir_name())));
    let on_platform: Vec<String> = same
        .iter()
        .filter(|e| e.supports(platform))
        .map(|e| e.version.to_string())
        .collect();
    if !on_platform.is_empty() {
        on_platform
    } else {
        same.iter().map(|e| e.to_string()).collect()
    }
}

/// Pick the closest compatible engine build from the registry.
pub fn resolve_engine(
    registry: &EngineRegistry,
    framework: Framework,
    requested: &str,
    platform: &Platform,
) -> Result<EngineSpec, EngineError> {
    let request: VersionRequest = requested.parse()?;
    resolve_in(registry.entries.iter(), framework, request, platform)
        .cloned()
        .ok_or_else(|| EngineError::NoCompatibleEngine {
            framework: framework.to_string(),
            requested: request.to_string(),
            candidates: nearest_misses(registry, framework, platform),
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineChoice {
    pub format: WeightsFormat,
    pub spec: EngineSpec,
    pub install_needed: bool,
}

/// Choose a weights format and engine for a model.
///
/// Each format's target engine is resolved over the registry together with
/// the installed engines, so the choice of version does not depend on what
/// happens to be installed. The first format (in descriptor order) whose
/// target is installed wins; otherwise the first format with any target.
pub fn engine_for_model(
    descriptor: &ModelDescriptor,
    installed: &[InstalledEngine],
    registry: &EngineRegistry,
    platform: &Platform,
) -> Result<EngineChoice, EngineError> {
    let mut pool: Vec<&EngineSpec> = registry.entries.iter().collect();
    for ie in installed {
        if !pool.iter().any(|s| s.same_build(&ie.spec)) {
            pool.push(&ie.spec);
        }
    }
    let mut targets = Vec::new();
    for (format, hint) in weights_formats(descriptor) {
        let Some(framework) = Framework::for_weights(format) else {
            continue;
        };
        let request: VersionRequest = hint.unwrap_or("").parse()?;
        if let Some(spec) = resolve_in(pool.iter().copied(), framework, request, platform) {
            targets.push((format, spec));
        }
    }
    let is_installed = |spec: &EngineSpec| installed.iter().any(|ie| ie.spec.same_build(spec));
    let chosen = targets
        .iter()
        .find(|(_, spec)| is_installed(spec))
        .or(targets.first());
    match chosen {
        Some(&(format, spec)) => {
            let installed_spec = installed.iter().find(|ie| ie.spec.same_build(spec));
            Ok(EngineChoice {
                format,
                spec: installed_spec.map_or_else(|| spec.clone(), |ie| ie.spec.clone()),
                install_needed: installed_spec.is_none(),
            })
        }
        None => Err(EngineError::NoCompatibleEngine {
            framework: descriptor
                .weights
                .iter()
                .map(|w| w.format.as_str())
                .collect::<Vec<_>>()
                .join("/"),
            requested: "any".into(),
            candidates: Vec::new(),
        }),
    }
}
