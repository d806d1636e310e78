use std::fs;

use mvicad::{generate_dataset, SimConfig};
use mvicad_cli::dataset::{
    read_dataset, write_dataset, DatasetError, DatasetManifest, Metadata,
};
use ndarray::Array2;
use tempfile::TempDir;

fn bits(a: &Array2<f64>) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn round_trip_is_bit_exact_including_ground_truth() {
    let mut cfg = SimConfig::new(5, 3, 700, 12, 42);
    cfg.snr_target = Some(8.0);
    let (views, truth) = generate_dataset(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    let metadata = Metadata {
        seed: Some(42),
        generator: None,
    };
    let manifest = write_dataset(dir.path(), &views, Some(&truth), metadata).unwrap();
    assert_eq!((manifest.m, manifest.p, manifest.n), (5, 3, 700));

    for name in &manifest.views {
        let len = fs::metadata(dir.path().join(name)).unwrap().len();
        assert_eq!(len, 3 * 700 * 8, "each view file is exactly p*n*8 bytes");
    }

    let (back, back_truth, back_manifest) = read_dataset(dir.path()).unwrap();
    assert_eq!(back_manifest, manifest);
    assert_eq!(back.n_views(), 5);
    for i in 0..5 {
        assert_eq!(bits(back.observations(i)), bits(views.observations(i)));
    }
    let back_truth = back_truth.unwrap();
    assert_eq!(bits(back_truth.sources.array()), bits(truth.sources.array()));
    for i in 0..5 {
        assert_eq!(
            bits(back_truth.mixing[i].array()),
            bits(truth.mixing[i].array())
        );
        assert_eq!(back_truth.delays[i].delays(), truth.delays[i].delays());
        assert_eq!(
            back_truth.delays[i].tau_max(),
            truth.delays.iter().map(|d| d.tau_max()).max().unwrap()
        );
        assert_eq!(bits(back_truth.noise[i].array()), bits(truth.noise[i].array()));
    }
    let view_truth = back.view(2).truth.as_ref().unwrap();
    assert_eq!(bits(view_truth.mixing.array()), bits(truth.mixing[2].array()));
}

#[test]
fn dataset_without_truth_reads_back_clean() {
    let cfg = SimConfig::new(2, 2, 64, 0, 7);
    let (views, _) = generate_dataset(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path(), &views, None, Metadata::default()).unwrap();
    let (back, truth, manifest) = read_dataset(dir.path()).unwrap();
    assert!(truth.is_none());
    assert!(manifest.ground_truth.is_none());
    assert!(back.view(0).truth.is_none());
    assert_eq!(bits(back.observations(1)), bits(views.observations(1)));
}

#[test]
fn truncated_view_file_names_the_file() {
    let cfg = SimConfig::new(2, 2, 64, 0, 3);
    let (views, _) = generate_dataset(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path(), &views, None, Metadata::default()).unwrap();
    let victim = dir.path().join("view_001.f64");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 8]).unwrap();
    match read_dataset(dir.path()) {
        Err(DatasetError::SizeMismatch { path, expected, got }) => {
            assert!(path.ends_with("view_001.f64"));
            assert_eq!(expected, 2 * 64 * 8);
            assert_eq!(got, expected - 8);
        }
        other => panic!("expected size mismatch, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn deleted_view_file_is_reported_missing() {
    let cfg = SimConfig::new(2, 2, 64, 0, 3);
    let (views, _) = generate_dataset(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path(), &views, None, Metadata::default()).unwrap();
    fs::remove_file(dir.path().join("view_000.f64")).unwrap();
    match read_dataset(dir.path()) {
        Err(DatasetError::MissingFile { path }) => assert!(path.ends_with("view_000.f64")),
        other => panic!("expected missing file, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn corrupt_payload_is_caught_as_non_finite() {
    let cfg = SimConfig::new(2, 2, 64, 0, 3);
    let (views, _) = generate_dataset(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path(), &views, None, Metadata::default()).unwrap();
    let victim = dir.path().join("view_000.f64");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[16..24].copy_from_slice(&f64::INFINITY.to_le_bytes());
    fs::write(&victim, &bytes).unwrap();
    match read_dataset(dir.path()) {
        Err(DatasetError::NonFinite { path, index }) => {
            assert!(path.ends_with("view_000.f64"));
            assert_eq!(index, 2);
        }
        other => panic!("expected non-finite, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn zero_view_manifest_is_rejected() {
    let dir = TempDir::new().unwrap();
    let manifest = DatasetManifest {
        format_version: 1,
        m: 0,
        p: 3,
        n: 700,
        dtype: "f64le".into(),
        views: vec![],
        ground_truth: None,
        metadata: Metadata::default(),
    };
    fs::write(
        dir.path().join("manifest.json"),
        serde_json::to_string(&manifest).unwrap(),
    )
    .unwrap();
    match read_dataset(dir.path()) {
        Err(DatasetError::Manifest(msg)) => assert!(msg.contains("m must be")),
        other => panic!("expected manifest error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn missing_manifest_is_a_missing_file() {
    let dir = TempDir::new().unwrap();
    match read_dataset(dir.path()) {
        Err(DatasetError::MissingFile { path }) => assert!(path.ends_with("manifest.json")),
        other => panic!("expected missing manifest, got {:?}", other.map(|_| ())),
    }
}
