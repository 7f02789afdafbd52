//! Reproducibility of the bundled fixture models: worker runs against the
//! bundled expectations, independent oracles, and pinned output hashes.

use std::path::Path;

use zoorun::fetch::SchemeFetcher;
use zoorun::fixtures::{FixtureSet, TEST_INPUT_FILE};
use zoorun::fsutil::sha256_bytes;
use zoorun::runner::{run_model, test_model, Tiling};
use zoorun::tensor::{read_zrt_file, write_zrt, Tensor};

/// SHA-256 of the ZRT1 bytes each fixture model produces on its bundled
/// test input. Any platform must reproduce these exactly.
pub const GOLDEN_OUTPUTS: [(&str, &str); 3] = [
    ("identity", "11301325d311f89193abc52cf2d48552b799ef1ab2805af810644b40a6329a9c"),
    ("blur3", "0782a736850afec5de6f5272ce04c52e2d023e896ac47f77b2bf160367331af8"),
    ("pool_u8", "e12704903f4469f9bfb27737dfab3ba1b85fe86081a947be459a2b10c9fe8b52"),
];

pub fn zrt_sha(t: &Tensor) -> String {
    let mut bytes = Vec::new();
    write_zrt(t, &mut bytes).unwrap();
    sha256_bytes(&bytes)
}

/// Population z-score over y and x, cast to f32, then the 3x3 box mean
/// with edge replication. Input is `1 x h x w x 1`.
pub fn blur3_oracle(input: &Tensor) -> Vec<f64> {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let x = input.to_f64_vec();
    let z: Vec<f64> = super::oracles::zmuv(&x, input.shape(), Some("yx"), 1e-6)
        .into_iter()
        .map(|v| v as f32 as f64)
        .collect();
    let at = |y: isize, x: isize| z[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += at(y + dy, x + dx);
                }
            }
            out.push(s / 9.0);
        }
    }
    out
}

/// Mean of each 2x2 block of u8 pixels, rounded half to even.
pub fn pool_u8_oracle(input: &Tensor) -> Vec<f64> {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let x = input.to_f64_vec();
    let mut out = Vec::new();
    for y in (0..h).step_by(2) {
        for c in (0..w).step_by(2) {
            let s = x[y * w + c] + x[y * w + c + 1] + x[(y + 1) * w + c] + x[(y + 1) * w + c + 1];
            out.push((s / 4.0).round_ties_even());
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct Reproducibility {
    pub models: usize,
    pub test_model_passed: usize,
    pub golden_matches: usize,
    pub oracle_matches: usize,
    pub notes: Vec<String>,
}

impl Reproducibility {
    pub fn passed(&self) -> bool {
        self.models == GOLDEN_OUTPUTS.len()
            && self.test_model_passed == self.models
            && self.golden_matches == self.models
            && self.oracle_matches == self.models
    }
}

/// test-model on every fixture through installed reference engines, plus
/// hash and oracle checks on fresh worker outputs.
pub fn check(set: &FixtureSet, engines: &Path) -> Reproducibility {
    let fetcher = SchemeFetcher::default();
    let env = super::environment(set, engines, &fetcher);
    let mut r = Reproducibility::default();
    for (id, golden) in GOLDEN_OUTPUTS {
        r.models += 1;
        let dir = set.model_dir(id);
        match test_model(&env, &dir) {
            Ok(report) if report.passed() => r.test_model_passed += 1,
            other => r.notes.push(format!("{id}: test-model {other:?}")),
        }
        let input = read_zrt_file(&dir.join(TEST_INPUT_FILE)).unwrap();
        let out = run_model(&env, &dir, vec![input.clone()], &Tiling::Auto).unwrap();
        let sha = zrt_sha(&out[0]);
        if sha == golden {
            r.golden_matches += 1;
        } else {
            r.notes.push(format!("{id}: output sha {sha}"));
        }
        let got = out[0].to_f64_vec();
        let ok = match id {
            "identity" => out[0].bytes() == input.bytes(),
            "blur3" => got.iter().zip(blur3_oracle(&input)).all(|(a, b)| (a - b).abs() <= 1e-6),
            "pool_u8" => got == pool_u8_oracle(&input),
            _ => false,
        };
        if ok {
            r.oracle_matches += 1;
        } else {
            r.notes.push(format!("{id}: oracle mismatch"));
        }
    }
    r
}
