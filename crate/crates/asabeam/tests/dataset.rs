mod common;

use asabeam::dataset::{generate_dataset, Dataset, MANIFEST_NAME};
use asabeam::error::AppError;
use common::tiny_distribution;

#[test]
fn generation_is_deterministic_and_independent_of_workers() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let dist = tiny_distribution();
    let (pa, ma) = generate_dataset(&dist, 3, a.path(), 7, 1).unwrap();
    let (pb, mb) = generate_dataset(&dist, 3, b.path(), 7, 3).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    for e in &ma.utterances {
        for rel in [&e.mixture, &e.speech_image, &e.noise_image] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }
    let (_, other) = generate_dataset(&dist, 3, b.path(), 8, 1).unwrap();
    assert_ne!(other.utterances[0].scene, ma.utterances[0].scene);
}

#[test]
fn scenes_follow_the_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let dist = tiny_distribution();
    let (_, m) = generate_dataset(&dist, 4, dir.path(), 1, 1).unwrap();
    assert_eq!(m.utterances.len(), 4);
    for e in &m.utterances {
        let s = &e.scene;
        assert!(dist.room_sizes.contains(&s.room_dims[0]) && dist.room_sizes.contains(&s.room_dims[1]));
        assert_eq!(s.room_dims[2], dist.room_height);
        assert!(s.t60 >= dist.t60_range[0] && s.t60 <= dist.t60_range[1]);
        assert!(s.snr_db >= dist.snr_range[0] && s.snr_db <= dist.snr_range[1]);
        assert_eq!(s.num_samples, 2000);
        assert_eq!(e.channels.len(), 5);
        assert_eq!(e.reference, 1);
    }
    let stats = m.stats();
    assert_eq!((stats.utterances, stats.channels), (4, 5));
    assert!((stats.total_seconds - 1.0).abs() < 1e-12);
}

#[test]
fn stored_mixture_is_the_sum_of_the_stored_images() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = generate_dataset(&tiny_distribution(), 2, dir.path(), 3, 1).unwrap();
    let ds = Dataset::open(&path).unwrap();
    ds.check_files().unwrap();
    for i in 0..ds.len() {
        let ex = ds.load(i).unwrap();
        assert_eq!(ex.mixture.num_channels(), 5);
        for c in 0..5 {
            for ((m, s), n) in ex.mixture.channel(c).iter().zip(ex.speech_image.channel(c)).zip(ex.noise_image.channel(c)) {
                let sum = s + n;
                assert!((m - sum).abs() <= sum.abs() * f32::EPSILON as f64 + 1e-30, "{} vs {}", m, sum);
            }
        }
    }
}

#[test]
fn empty_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (path, m) = generate_dataset(&tiny_distribution(), 0, dir.path(), 3, 1).unwrap();
    assert!(m.utterances.is_empty());
    let ds = Dataset::open(&path).unwrap();
    assert!(ds.is_empty());
    ds.check_files().unwrap();
}

#[test]
fn missing_audio_names_every_affected_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = generate_dataset(&tiny_distribution(), 3, dir.path(), 3, 1).unwrap();
    std::fs::remove_file(dir.path().join("utt00000/noise_image.wav")).unwrap();
    std::fs::remove_file(dir.path().join("utt00002/mixture.wav")).unwrap();
    let e = Dataset::open(&path).unwrap().check_files().unwrap_err();
    assert!(matches!(e, AppError::Io { .. }));
    let msg = e.to_string();
    assert!(msg.contains("utt00000") && msg.contains("utt00002") && !msg.contains("utt00001"), "{}", msg);
}

#[test]
fn malformed_manifest_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join(MANIFEST_NAME);
    std::fs::write(&p, r#"{"format": 1, "seed": 0}"#).unwrap();
    let e = Dataset::open(&p).unwrap_err();
    assert!(matches!(e, AppError::Format { .. }), "{}", e);
    std::fs::write(&p, "[").unwrap();
    assert_eq!(Dataset::open(&p).unwrap_err().exit_code(), 3);
}
