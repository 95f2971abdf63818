use std::fs;

use priorformer::io::{load_dataset, load_params, read_feature_file, save_params, write_dataset, write_feature_file};
use priorformer::Failure;
use priorformer_core::dataio::{FeatureSequence, Frame};
use priorformer_core::encoder::EncoderConfig;
use priorformer_core::model::{init_model, predict_video, ModelConfig};
use priorformer_core::rng::SeededRng;
use priorformer_core::synth::{synth_dataset, SynthSpec};
use priorformer_core::FormatError;
use proptest::prelude::*;

fn small_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: 1,
            heads: 2,
            width: 8,
            ff_width: 8,
            tokens: 4,
            feature_width: 16,
            content_width: 8,
            distortion_width: 8,
        },
        gru_hidden: 4,
        ..ModelConfig::default()
    }
}

fn videos(n: usize) -> Vec<FeatureSequence> {
    synth_dataset(&SynthSpec {
        videos: n,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn format_error(r: Result<impl std::fmt::Debug, Failure>) -> FormatError {
    match r {
        Err(Failure::Format { source, .. }) => source,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn feature_file_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let v = &videos(1)[0];
    let a = dir.path().join("a.pfvf");
    let b = dir.path().join("b.pfvf");
    write_feature_file(v, &a).unwrap();
    let back = read_feature_file(&a).unwrap();
    assert_eq!(back.id, "a");
    assert_eq!(back.frames.len(), v.frames.len());
    write_feature_file(&back, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn feature_file_header_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.pfvf");
    write_feature_file(&videos(1)[0], &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    assert_eq!(&bytes[..4], b"PFVF");
    assert_eq!(
        [
            u32_at(4),
            u32_at(8),
            u32_at(12),
            u32_at(16),
            u32_at(20),
            u32_at(24),
            u32_at(28)
        ],
        [1, 8, 4, 16, 8, 8, 1]
    );
    assert_eq!(bytes.len(), 36 + 8 * (4 * 16 + 8 + 8) * 4 + 4);
}

#[test]
fn feature_file_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.pfvf");
    write_feature_file(&videos(1)[0], &path).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    fs::write(&path, &bad).unwrap();
    assert!(matches!(
        format_error(read_feature_file(&path)),
        FormatError::BadMagic { .. }
    ));

    let mut bad = good.clone();
    bad[100] ^= 0xff;
    fs::write(&path, &bad).unwrap();
    assert!(matches!(
        format_error(read_feature_file(&path)),
        FormatError::Checksum { .. }
    ));

    fs::write(&path, &good[..good.len() - 50]).unwrap();
    assert!(matches!(
        format_error(read_feature_file(&path)),
        FormatError::Truncated { .. }
    ));

    // a header promising more frames than the payload holds
    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&9u32.to_le_bytes());
    fs::write(&path, &bad).unwrap();
    assert!(matches!(
        format_error(read_feature_file(&path)),
        FormatError::Truncated { .. }
    ));

    let mut bad = good.clone();
    bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
    bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
    fs::write(&path, &bad).unwrap();
    assert!(matches!(
        format_error(read_feature_file(&path)),
        FormatError::ShapeOverflow | FormatError::Truncated { .. }
    ));

    assert!(matches!(
        read_feature_file(&dir.path().join("missing.pfvf")),
        Err(Failure::Io { .. })
    ));
}

#[test]
fn parameter_file_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.pfmp");
    let params = init_model(&small_model(), 4).unwrap();
    save_params(&params, &path).unwrap();
    let back = load_params(&path).unwrap();
    assert_eq!(back, params);
    let v = &videos(1)[0];
    assert_eq!(predict_video(v, &back).unwrap(), predict_video(v, &params).unwrap());

    let good = fs::read(&path).unwrap();
    let mut bad = good.clone();
    bad[0] = b'Q';
    fs::write(&path, &bad).unwrap();
    assert!(matches!(format_error(load_params(&path)), FormatError::BadMagic { .. }));
    let mut bad = good.clone();
    bad[good.len() / 2] ^= 1;
    fs::write(&path, &bad).unwrap();
    assert!(matches!(format_error(load_params(&path)), FormatError::Checksum { .. }));
    fs::write(&path, &good[..good.len() - 1]).unwrap();
    assert!(matches!(
        format_error(load_params(&path)),
        FormatError::Truncated { .. }
    ));
    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    fs::write(&path, &bad).unwrap();
    assert_eq!(
        format_error(load_params(&path)),
        FormatError::Version { found: 7, expected: 1 }
    );
}

#[test]
fn dataset_directory_is_sorted_and_filtered() {
    let dir = tempfile::tempdir().unwrap();
    let data = videos(5);
    write_dataset(&data, dir.path()).unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    let ids: Vec<&str> = loaded.iter().map(|v| v.id.as_str()).collect();
    assert_eq!(
        ids,
        ["synth_0000", "synth_0001", "synth_0002", "synth_0003", "synth_0004"]
    );
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(empty.path()), Err(Failure::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn written_values_read_back_at_f32_precision(
        frames in 1usize..4,
        tokens in 1usize..4,
        width in 1usize..6,
        seed in any::<u64>(),
        mos in prop::option::of(-10.0f64..10.0),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(seed);
        let v = FeatureSequence {
            id: "x".into(),
            frames: (0..frames)
                .map(|_| Frame {
                    features: rng.normal_tensor(&[tokens, width], 3.0),
                    content: rng.normal_tensor(&[width + 1], 3.0),
                    distortion: rng.normal_tensor(&[2], 3.0),
                })
                .collect(),
            mos,
        };
        let path = dir.path().join("x.pfvf");
        write_feature_file(&v, &path).unwrap();
        let back = read_feature_file(&path).unwrap();
        prop_assert_eq!(back.mos, mos.map(|m| m as f32 as f64));
        for (a, b) in v.frames.iter().zip(&back.frames) {
            for (x, y) in a.content.data().iter().zip(b.content.data()) {
                prop_assert_eq!(*x as f32 as f64, *y);
            }
            for (x, y) in a.distortion.data().iter().zip(b.distortion.data()) {
                prop_assert_eq!(*x as f32 as f64, *y);
            }
        }
    }
}
