//! Engine registry, version resolution and checksum-verified installation.

mod install;
mod resolve;

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::fetch::FetchError;
use crate::model_spec::WeightsFormat;

pub use install::{
    engine_lock_path, install_engine, list_installed, verify_engine_dir, CorruptEngine, InstalledEngine,
    InstalledListing, MANIFEST_FILE,
};
pub use resolve::{engine_for_model, match_tier, resolve_engine, EngineChoice, VersionRequest};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine registry: {0}")]
    Registry(String),
    #[error("unknown framework '{0}'")]
    UnknownFramework(String),
    #[error("invalid version '{0}': expected major[.minor[.patch]]")]
    InvalidVersion(String),
    #[error("no compatible engine for {framework} {requested}{}", fmt_candidates(.candidates))]
    NoCompatibleEngine {
        framework: String,
        requested: String,
        candidates: Vec<String>,
    },
    #[error("checksum mismatch for {filename}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        filename: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("engine {0} is being installed by another process")]
    AlreadyInstalling(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_candidates(c: &[String]) -> String {
    if c.is_empty() {
        String::new()
    } else {
        format!(" (available: {})", c.join(", "))
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Framework {
    Tensorflow,
    Pytorch,
    Onnx,
    Reference,
}

impl Framework {
    pub const ALL: [Framework; 4] = [
        Framework::Tensorflow,
        Framework::Pytorch,
        Framework::Onnx,
        Framework::Reference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Tensorflow => "tensorflow",
            Framework::Pytorch => "pytorch",
            Framework::Onnx => "onnx",
            Framework::Reference => "reference",
        }
    }

    /// Framework able to execute a weights format, if any.
    pub fn for_weights(format: WeightsFormat) -> Option<Framework> {
        match format {
            WeightsFormat::TensorflowSavedModelBundle => Some(Framework::Tensorflow),
            WeightsFormat::Torchscript => Some(Framework::Pytorch),
            WeightsFormat::Onnx => Some(Framework::Onnx),
            WeightsFormat::ReferenceGraph => Some(Framework::Reference),
            WeightsFormat::TensorflowJs => None,
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Framework {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Framework::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| EngineError::UnknownFramework(s.to_string()))
    }
}

impl Serialize for Framework {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Framework {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    pub fn new(major: u64, minor: u64, patch: u64) -> Version {
        Version { major, minor, patch }
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.major, self.minor, self.patch).cmp(&(other.major, other.minor, other.patch))
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

pub(crate) fn parse_components(s: &str) -> Option<Vec<u64>> {
    if s.is_empty() {
        return None;
    }
    s.split('.')
        .map(|p| {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                None
            } else {
                p.parse().ok()
            }
        })
        .collect()
}

impl FromStr for Version {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_components(s).as_deref() {
            Some(&[major, minor, patch]) => Ok(Version { major, minor, patch }),
            _ => Err(EngineError::InvalidVersion(s.to_string())),
        }
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    #[serde(default)]
    pub gpu: bool,
}

impl Platform {
    pub fn new(os: &str, arch: &str, gpu: bool) -> Platform {
        Platform {
            os: os.to_string(),
            arch: arch.to_string(),
            gpu,
        }
    }

    /// The running host, cpu only.
    pub fn current() -> Platform {
        Platform::new(std::env::consts::OS, std::env::consts::ARCH, false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub url: String,
    pub sha256: String,
    pub filename: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    pub framework: Framework,
    pub version: Version,
    pub os: String,
    pub arch: String,
    pub cpu: bool,
    pub gpu: bool,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
}

type EngineKey<'a> = (Framework, Version, &'a str, &'a str, bool, bool);

impl EngineSpec {
    fn key(&self) -> EngineKey<'_> {
        (self.framework, self.version, &self.os, &self.arch, self.cpu, self.gpu)
    }

    pub fn same_build(&self, other: &EngineSpec) -> bool {
        self.key() == other.key()
    }

    fn device_tag(&self) -> &'static str {
        match (self.cpu, self.gpu) {
            (true, true) => "cpu+gpu",
            (false, true) => "gpu",
            _ => "cpu",
        }
    }

    /// `<framework>-<version>-<os>-<arch>-<cpu|gpu|cpu+gpu>`
    pub fn dir_name(&self) -> String {
        format!(
            "{}-{}-{}-{}-{}",
            self.framework,
            self.version,
            self.os,
            self.arch,
            self.device_tag()
        )
    }

    pub fn supports(&self, platform: &Platform) -> bool {
        self.os == platform.os && self.arch == platform.arch && if platform.gpu { self.gpu } else { self.cpu }
    }

    pub fn validate(&self) -> Result<(), String> {
        let id = self.dir_name();
        if !self.cpu && !self.gpu {
            return Err(format!("{id}: at least one of cpu/gpu must be true"));
        }
        for tag in [&self.os, &self.arch] {
            if tag.is_empty() || !tag.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                return Err(format!("{id}: invalid platform tag '{tag}'"));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.artifacts {
            if !crate::fsutil::is_plain_file_name(&a.filename) || a.filename == MANIFEST_FILE {
                return Err(format!("{id}: invalid artifact filename '{}'", a.filename));
            }
            if !names.insert(a.filename.as_str()) {
                return Err(format!("{id}: duplicate artifact filename '{}'", a.filename));
            }
            if !crate::model_spec::is_sha256(&a.sha256) {
                return Err(format!("{id}: artifact {} has an invalid sha256", a.filename));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EngineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({}/{} {})",
            self.framework,
            self.version,
            self.os,
            self.arch,
            self.device_tag()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineRegistry {
    pub entries: Vec<EngineSpec>,
}

impl EngineRegistry {
    pub fn new(entries: Vec<EngineSpec>) -> Result<EngineRegistry, EngineError> {
        for (i, e) in entries.iter().enumerate() {
            e.validate().map_err(EngineError::Registry)?;
            if entries[..i].iter().any(|p| p.same_build(e)) {
                return Err(EngineError::Registry(format!("duplicate entry {}", e.dir_name())));
            }
        }
        Ok(EngineRegistry { entries })
    }

    /// Parse a JSON array of engine records. Artifact URLs without a scheme
    /// are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<EngineRegistry, EngineError> {
        let mut entries: Vec<EngineSpec> =
            serde_json::from_str(text).map_err(|e| EngineError::Registry(e.to_string()))?;
        if let Some(base) = base_dir {
            for a in entries.iter_mut().flat_map(|e| e.artifacts.iter_mut()) {
                a.url = crate::fetch::resolve_relative(&a.url, base);
            }
        }
        EngineRegistry::new(entries)
    }

    pub fn load(path: &Path) -> Result<EngineRegistry, EngineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        EngineRegistry::parse(&text, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("registry serializes")
    }
}
