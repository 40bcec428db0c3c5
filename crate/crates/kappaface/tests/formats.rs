use std::path::Path;

use kappaface::formats::{self, Checkpoint, FormatError, Stamp};
use kappaface_core::class_stats::MemoryBuffer;
use kappaface_core::data::{generate, make_pairs, SyntheticSpec};
use kappaface_core::model::{Activation, ClassifierParams, MlpParams};

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 5,
        input_dim: 7,
        min_n: 3,
        max_n: 20,
        seed: 4,
        ..SyntheticSpec::default()
    }
}

#[test]
fn dataset_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.kfd");
    let ds = generate(&small_spec()).unwrap();
    formats::write_dataset(&ds, &path).unwrap();
    let back = formats::read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.inputs), bits(&ds.inputs));
    back.validate().unwrap();
}

#[test]
fn truncated_dataset_is_rejected_at_every_length() {
    let ds = generate(&small_spec()).unwrap();
    let bytes = formats::encode_dataset(&ds);
    for cut in [0, 3, 4, 10, 16, 17, bytes.len() / 2, bytes.len() - 1] {
        let err = formats::decode_dataset(Path::new("d.kfd"), &bytes[..cut]).unwrap_err();
        match err {
            FormatError::Truncated { offset, .. } => assert_eq!(offset, cut),
            FormatError::BadMagic { .. } => assert!(cut < 4),
            other => panic!("cut {cut}: {other}"),
        }
    }
}

#[test]
fn wrong_magic_names_the_expected_one() {
    let ds = generate(&small_spec()).unwrap();
    let mut bytes = formats::encode_dataset(&ds);
    bytes[..4].copy_from_slice(b"KMM1");
    let err = formats::decode_dataset(Path::new("d.kfd"), &bytes).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("\"KFD1\"") && msg.contains("d.kfd"), "{msg}");
}

#[test]
fn corrupt_labels_are_reported_with_offset() {
    let ds = generate(&small_spec()).unwrap();
    let mut bytes = formats::encode_dataset(&ds);
    let label_at = 16 + 4 * ds.inputs.len();
    bytes[label_at..label_at + 4].copy_from_slice(&999u32.to_le_bytes());
    assert!(matches!(
        formats::decode_dataset(Path::new("d"), &bytes),
        Err(FormatError::Invalid { .. })
    ));
    let mut long = formats::encode_dataset(&ds);
    long.push(0);
    assert!(matches!(
        formats::decode_dataset(Path::new("d"), &long),
        Err(FormatError::Invalid { offset, .. }) if offset == long.len() - 1
    ));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.kmm");
    let ckpt = Checkpoint {
        mlp: MlpParams::init(&[7, 9, 4], Activation::Tanh, 3).unwrap(),
        classifier: ClassifierParams::init(5, 4, 3),
    };
    formats::write_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(
        formats::read_checkpoint(&path, Activation::Tanh).unwrap(),
        ckpt
    );
    let bytes = std::fs::read(&path).unwrap();
    for cut in [5, 20, bytes.len() - 8] {
        assert!(formats::decode_checkpoint(&path, &bytes[..cut], Activation::Tanh).is_err());
    }
}

#[test]
fn buffer_snapshot_round_trip_within_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.kmb");
    let labels = vec![0, 1, 1, 2, 0, 2, 2];
    let buffer = MemoryBuffer::new(&labels, 6, 0.3, 11).unwrap();
    formats::write_buffer(&buffer, &path).unwrap();
    let back = formats::read_buffer(&path, 0.3).unwrap();
    assert_eq!(back.labels(), buffer.labels());
    for (a, b) in back.vectors().iter().zip(buffer.vectors()) {
        assert!((a - b).abs() < 1e-6);
    }
    let ka = back.epoch_concentrations().kappa_hat;
    let kb = buffer.epoch_concentrations().kappa_hat;
    for (a, b) in ka.iter().zip(&kb) {
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
    }
}

#[test]
fn pair_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.tsv");
    let ds = generate(&small_spec()).unwrap();
    let pairs = make_pairs(&ds, 15, 15, 2).unwrap();
    formats::write_pairs(&pairs, &path, Stamp::None).unwrap();
    assert_eq!(formats::read_pairs(&path).unwrap(), pairs);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn failed_write_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing-dir").join("d.kfd");
    let ds = generate(&small_spec()).unwrap();
    assert!(formats::write_dataset(&ds, &path).is_err());
    assert!(!path.exists());
}
