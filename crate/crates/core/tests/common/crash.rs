//! Interrupted downloads: a fetcher that dies after `k` bytes, swept over
//! `k`, must never leave a partial engine or model where listing or
//! parsing would find it.

use std::fs;
use std::path::Path;

use zoorun::engine_manager::{install_engine, list_installed, resolve_engine, Artifact, EngineSpec, Framework, Platform};
use zoorun::fetch::file_url;
use zoorun::fixtures::FixtureSet;
use zoorun::fsutil::sha256_bytes;
use zoorun::model_spec::{parse_model_descriptor, DESCRIPTOR_FILE};
use zoorun::zoo_client::download_model;

use super::FailAfter;

/// Engine with two small artifacts, so failures land both inside and
/// between files. Returns the spec and its total artifact bytes.
pub fn two_artifact_engine(dir: &Path) -> (EngineSpec, u64) {
    let mut artifacts = Vec::new();
    let mut total = 0;
    for (name, len) in [("lib.so", 300usize), ("model.bin", 200)] {
        let content: Vec<u8> = (0..len).map(|i| (i * 7 % 251) as u8).collect();
        let path = dir.join(name);
        fs::write(&path, &content).unwrap();
        artifacts.push(Artifact {
            url: file_url(&path),
            sha256: sha256_bytes(&content),
            filename: name.into(),
        });
        total += len as u64;
    }
    let spec = EngineSpec {
        framework: Framework::Onnx,
        version: "1.3.0".parse().unwrap(),
        os: "linux".into(),
        arch: "x86_64".into(),
        cpu: true,
        gpu: false,
        artifacts,
    };
    (spec, total)
}

/// Names in `dir` that a listing would see, plus leftover staging dirs.
pub fn leftovers(dir: &Path) -> Vec<String> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    entries
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.') || n.starts_with(".staging"))
        .collect()
}

#[derive(Debug, Default)]
pub struct Sweep {
    pub cases: usize,
    pub violations: Vec<String>,
}

impl Sweep {
    fn check_engines(&mut self, label: String, engines: &Path) {
        self.cases += 1;
        let listing = list_installed(engines);
        if !listing.engines.is_empty() || !listing.corrupt.is_empty() {
            self.violations.push(format!("{label}: listing {:?} / {:?}", listing.engines, listing.corrupt));
        }
        let left = leftovers(engines);
        if !left.is_empty() {
            self.violations.push(format!("{label}: leftovers {left:?}"));
        }
    }
}

fn sweep_points(total: u64, every_byte: bool) -> Vec<u64> {
    if every_byte {
        return (0..total).collect();
    }
    let mut k = vec![0, 1, 4096, total / 3, total / 2, total - 1];
    k.retain(|&x| x < total);
    k.dedup();
    k
}

/// Every byte of a two-artifact engine, and sample points through the
/// reference engine (the worker binary).
pub fn engines(set: &FixtureSet, scratch: &Path) -> Sweep {
    let mut sweep = Sweep::default();
    let (small, total) = two_artifact_engine(scratch);
    let reference = resolve_engine(&set.registry, Framework::Reference, "1.0.0", &Platform::current()).unwrap();
    let reference_total = fs::metadata(super::worker_bin()).unwrap().len();
    for (spec, total, every) in [(&small, total, true), (&reference, reference_total, false)] {
        let engines = scratch.join(format!("engines-{}", spec.framework));
        for k in sweep_points(total, every) {
            let label = format!("{} k={k}", spec.framework);
            match install_engine(spec, &engines, &FailAfter::new(k)) {
                Ok(_) => sweep.violations.push(format!("{label}: install succeeded")),
                Err(_) => sweep.check_engines(label, &engines),
            }
        }
        match install_engine(spec, &engines, &FailAfter::new(total)) {
            Ok(e) if list_installed(&engines).engines == [e.clone()] => {}
            other => sweep.violations.push(format!("{}: full install {other:?}", spec.framework)),
        }
    }
    sweep
}

/// Every byte of every indexed model archive.
pub fn models(set: &FixtureSet, scratch: &Path) -> Sweep {
    let mut sweep = Sweep::default();
    for record in &set.index.records {
        let dest = scratch.join(format!("models-{}", record.id));
        let total = fs::metadata(set.root.join(format!("archives/{}.zip", record.id))).unwrap().len();
        for k in 0..total {
            sweep.cases += 1;
            let label = format!("{} k={k}", record.id);
            if download_model(record, &dest, &FailAfter::new(k)).is_ok() {
                sweep.violations.push(format!("{label}: download succeeded"));
            }
            let left = leftovers(&dest);
            if !left.is_empty() {
                sweep.violations.push(format!("{label}: leftovers {left:?}"));
            }
        }
        match download_model(record, &dest, &FailAfter::new(total)) {
            Ok(d) if !d.cached => {
                let text = fs::read_to_string(d.path.join(DESCRIPTOR_FILE)).unwrap();
                if let Err(e) = parse_model_descriptor(&text) {
                    sweep.violations.push(format!("{}: downloaded descriptor: {e}", record.id));
                }
            }
            other => sweep.violations.push(format!("{}: full download {other:?}", record.id)),
        }
    }
    sweep
}
