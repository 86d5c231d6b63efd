mod common;

use common::*;
use dgn_spline::experiments::{generate_random_net, RandomNetSpec};
use dgn_spline::io::{load_document, load_model, save_document, save_model, to_canonical_json, ModelDocument};
use dgn_spline::{Activation, ActivationKind, Error};
use serde_json::json;

#[test]
fn saving_twice_gives_identical_bytes() {
    let mut r = rng(61);
    let net = random_net(&mut r, 3, &[5, 4], 6, ActivationKind::Abs);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_model(&net, &a).unwrap();
    let loaded = load_model(&a).unwrap();
    save_model(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for (x, y) in net.layers().iter().zip(loaded.layers()) {
        assert!(x.weights().iter().zip(y.weights().iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(x.bias().iter().zip(y.bias().iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn metadata_survives_a_round_trip() {
    let spec = RandomNetSpec::new(2, 4, vec![3], Activation::leaky_relu(0.1).unwrap(), 8);
    let mut doc = ModelDocument::new(generate_random_net(&spec).unwrap());
    doc.metadata.insert("seed".into(), json!(8));
    doc.metadata.insert("note".into(), json!({"b": [1, 2], "a": "x"}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_document(&doc, &path).unwrap();
    let back = load_document(&path).unwrap();
    assert_eq!(back, doc);
    assert_eq!(to_canonical_json(&back), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn same_seed_gives_same_file() {
    let spec = RandomNetSpec::new(4, 9, vec![8, 8], Activation::leaky_relu(0.2).unwrap(), 33);
    let a = to_canonical_json(&ModelDocument::new(generate_random_net(&spec).unwrap()));
    let b = to_canonical_json(&ModelDocument::new(generate_random_net(&spec).unwrap()));
    assert_eq!(a, b);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_model("/nonexistent/model.json").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
