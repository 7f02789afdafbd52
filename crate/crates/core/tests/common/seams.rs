//! Tiled-versus-whole comparisons on the blur3 fixture model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoorun::engine_worker::{InferenceBackend, ReferenceGraphBackend};
use zoorun::fixtures::model_fixtures;
use zoorun::model_spec::{parse_model_descriptor, ModelDescriptor};
use zoorun::runner::{predict, InProcess, Tiling};
use zoorun::tensor::{Axis, Tensor};

pub const SIZES: [usize; 5] = [7, 8, 15, 16, 17];

/// blur3 descriptor with the declared halo replaced by `halo`, and an
/// in-process executor for its graph.
pub fn blur3(halo: usize) -> (ModelDescriptor, InProcess) {
    let f = model_fixtures().into_iter().find(|f| f.id == "blur3").unwrap();
    let text = f
        .descriptor
        .replace("{weights_sha}", super::SHA_A)
        .replace("halo: [0, 1, 1, 0]", &format!("halo: [0, {halo}, {halo}, 0]"));
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("weights.refgraph");
    std::fs::write(&graph, f.graph).unwrap();
    let model = ReferenceGraphBackend.load(&graph).unwrap();
    (parse_model_descriptor(&text).unwrap(), InProcess(model))
}

pub fn image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_values("image", "byxc".parse().unwrap(), vec![1, size, size, 1], &v).unwrap()
}

pub fn extents(e: usize) -> Tiling {
    Tiling::Extents(BTreeMap::from([(Axis::Y, e), (Axis::X, e)]))
}

#[derive(Debug)]
pub struct SeamCase {
    pub size: usize,
    pub extent: usize,
    pub identical: bool,
}

/// Every size against extents 6, 10 and the full size.
pub fn sweep(halo: usize) -> Vec<SeamCase> {
    let (descriptor, mut exec) = blur3(halo);
    let mut out = Vec::new();
    for (i, &size) in SIZES.iter().enumerate() {
        let input = image(size, 100 + i as u64);
        let whole = predict(&descriptor, vec![input.clone()], &mut exec, &Tiling::Off).unwrap();
        for extent in [6, 10, size] {
            let tiled = predict(&descriptor, vec![input.clone()], &mut exec, &extents(extent)).unwrap();
            out.push(SeamCase {
                size,
                extent,
                identical: tiled == whole,
            });
        }
    }
    out
}
