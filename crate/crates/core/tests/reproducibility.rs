mod common;

use common::{fixture_set, golden};
use zoorun::fixtures::{model_fixtures, write_model, TEST_OUTPUT_FILE};
use zoorun::tensor::read_zrt_file;

#[test]
fn fixtures_reproduce_through_workers() {
    let (dir, set) = fixture_set();
    let r = golden::check(&set, &dir.path().join("engines"));
    assert!(r.passed(), "{r:?}");
}

#[test]
fn fixture_generation_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for f in model_fixtures() {
        let x = write_model(&a.path().join(f.id), &f).unwrap();
        let y = write_model(&b.path().join(f.id), &f).unwrap();
        for name in ["rdf.yaml", "weights.refgraph", "test_input.zrt", "test_output.zrt"] {
            assert_eq!(std::fs::read(x.join(name)).unwrap(), std::fs::read(y.join(name)).unwrap(), "{name}");
        }
        let expected = golden::GOLDEN_OUTPUTS.iter().find(|(id, _)| *id == f.id).unwrap().1;
        let out = read_zrt_file(&x.join(TEST_OUTPUT_FILE)).unwrap();
        assert_eq!(golden::zrt_sha(&out), expected, "{}", f.id);
    }
}

#[test]
fn archives_are_byte_stable() {
    let (_a, one) = fixture_set();
    let (_b, two) = fixture_set();
    for r in &one.index.records {
        assert_eq!(Some(&r.sha256), two.index.get(&r.id).map(|x| &x.sha256));
    }
}
