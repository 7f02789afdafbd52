//! Two reference engine versions serving sessions side by side.

use std::path::Path;

use zoorun::engine_manager::{install_engine, resolve_engine, Framework, InstalledEngine, Platform};
use zoorun::engine_worker::{open_session, ModelSession, SessionConfig};
use zoorun::fetch::SchemeFetcher;
use zoorun::fixtures::FixtureSet;
use zoorun::model_spec::{ModelDescriptor, WeightsFormat};
use zoorun::runner::{load_descriptor, predict, Tiling};
use zoorun::tensor::Tensor;

pub fn install_reference(set: &FixtureSet, engines: &Path, version: &str) -> InstalledEngine {
    let spec = resolve_engine(&set.registry, Framework::Reference, version, &Platform::current()).unwrap();
    assert_eq!(spec.version.to_string(), version);
    install_engine(&spec, engines, &SchemeFetcher::default()).unwrap()
}

pub fn session(engine: &InstalledEngine, model: &Path, config: SessionConfig) -> ModelSession {
    open_session(engine, model, WeightsFormat::ReferenceGraph, config).unwrap()
}

struct Lane {
    descriptor: ModelDescriptor,
    inputs: Vec<Tensor>,
}

fn lane(set: &FixtureSet, id: &str, sizes: &[usize], seed: u64) -> Lane {
    let descriptor = load_descriptor(&set.model_dir(id)).unwrap();
    let inputs = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| super::seams::image(n, seed + i as u64))
        .collect();
    Lane { descriptor, inputs }
}

fn run_one(lane: &Lane, s: &mut ModelSession, i: usize) -> Vec<Tensor> {
    let tiling = if i.is_multiple_of(2) { Tiling::Off } else { super::seams::extents(6) };
    predict(&lane.descriptor, vec![lane.inputs[i].clone()], s, &tiling).unwrap()
}

#[derive(Debug)]
pub struct Isolation {
    pub identical: bool,
    pub distinct_workers: bool,
    pub distinct_roots: bool,
    pub runs: usize,
}

/// blur3 on reference 1.0.0 and pool_u8 on reference 2.0.0: solo runs
/// first, then both sessions open at once with requests interleaved.
pub fn interleaved_vs_solo(set: &FixtureSet, engines: &Path) -> Isolation {
    let e1 = install_reference(set, engines, "1.0.0");
    let e2 = install_reference(set, engines, "2.0.0");
    let a = lane(set, "blur3", &[8, 16, 17, 12], 1);
    let b = lane(set, "pool_u8", &[8, 16, 12, 20], 50);
    let cfg = SessionConfig::default();

    let mut solo = Vec::new();
    for (lane, engine, id) in [(&a, &e1, "blur3"), (&b, &e2, "pool_u8")] {
        let mut s = session(engine, &set.model_dir(id), cfg.clone());
        solo.push((0..lane.inputs.len()).map(|i| run_one(lane, &mut s, i)).collect::<Vec<_>>());
        s.close();
    }

    let mut s1 = session(&e1, &set.model_dir("blur3"), cfg.clone());
    let mut s2 = session(&e2, &set.model_dir("pool_u8"), cfg);
    let mut mixed = [Vec::new(), Vec::new()];
    for i in 0..a.inputs.len() {
        mixed[0].push(run_one(&a, &mut s1, i));
        mixed[1].push(run_one(&b, &mut s2, i));
    }
    let distinct_workers = s1.worker_pid() != s2.worker_pid();
    let distinct_roots = s1.engine().root_dir != s2.engine().root_dir;
    s1.close();
    s2.close();
    Isolation {
        identical: solo[0] == mixed[0] && solo[1] == mixed[1],
        distinct_workers,
        distinct_roots,
        runs: 2 * a.inputs.len(),
    }
}
