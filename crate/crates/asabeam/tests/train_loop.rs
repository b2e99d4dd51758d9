mod common;

use asabeam::dataset::{generate_dataset, Dataset};
use asabeam::train_loop::{prepare_dataset, run_training};
use asabeam::weights_file::WeightsFile;
use asabeam_core::estimator::Variant;
use asabeam_core::training::ChannelRandomization;
use common::{tiny_distribution, tiny_train};

fn dataset(dir: &std::path::Path, n: usize) -> Dataset {
    let (p, _) = generate_dataset(&tiny_distribution(), n, dir, 2, 1).unwrap();
    Dataset::open(p).unwrap()
}

fn curve(path: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn resume_continues_the_same_curve() {
    let data_dir = tempfile::tempdir().unwrap();
    let ds = dataset(data_dir.path(), 3);
    let mut cfg = tiny_train(Variant::Tac, None, 4);
    cfg.checkpoint_every = 2;
    cfg.channel_randomization = ChannelRandomization::Random;
    let data = prepare_dataset(&ds, &cfg, 1).unwrap();

    let full = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let a = run_training(&cfg, &data, full.path(), None, |r| seen.push(r.step)).unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert!(full.path().join("checkpoint_000002.asaw").is_file());
    assert!(full.path().join("checkpoint_000004.asaw").is_file());
    let lines = curve(&a.loss_csv);
    assert_eq!(lines[0], "step,loss,c_prime,wall_ms");
    assert_eq!(lines.len(), 5);

    // Resume in a copy of the run directory from the step-2 checkpoint.
    let part = tempfile::tempdir().unwrap();
    std::fs::copy(a.loss_csv.as_path(), part.path().join("loss.csv")).unwrap();
    let ckpt = full.path().join("checkpoint_000002.asaw");
    let b = run_training(&cfg, &data, part.path(), Some(&ckpt), |_| {}).unwrap();
    assert_eq!(b.records, a.records[2..].to_vec());
    assert_eq!(b.weights, a.weights);
    let strip = |v: Vec<String>| -> Vec<String> { v.into_iter().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect() };
    assert_eq!(strip(curve(&b.loss_csv)), strip(lines));
    assert_eq!(std::fs::read(&a.weights_path).unwrap(), std::fs::read(&b.weights_path).unwrap());
}

#[test]
fn final_weights_record_the_channel_mode() {
    let data_dir = tempfile::tempdir().unwrap();
    let ds = dataset(data_dir.path(), 2);
    let mut cfg = tiny_train(Variant::Tac, None, 1);
    cfg.channel_randomization = ChannelRandomization::Random;
    let data = prepare_dataset(&ds, &cfg, 1).unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = run_training(&cfg, &data, out.path(), None, |_| {}).unwrap();
    let f = WeightsFile::load(&r.weights_path).unwrap();
    assert_eq!(f.metadata["channel_randomization"], "random");
    assert_eq!(f.metadata["steps_completed"], 1);
    assert_eq!(f.adam.unwrap().step, 1);
    assert_eq!(f.weights, r.weights);
}

#[test]
fn utterances_are_clipped_to_max_seconds() {
    let data_dir = tempfile::tempdir().unwrap();
    let ds = dataset(data_dir.path(), 1);
    let mut cfg = tiny_train(Variant::Tac, None, 1);
    cfg.max_seconds = 0.125;
    let data = prepare_dataset(&ds, &cfg, 1).unwrap();
    assert_eq!(data[0].speech_image.len(), 1000);
}

#[test]
fn concat_model_on_wrong_channel_count_is_a_mismatch() {
    let data_dir = tempfile::tempdir().unwrap();
    let ds = dataset(data_dir.path(), 2);
    let cfg = tiny_train(Variant::Concat, Some(3), 1);
    let data = prepare_dataset(&ds, &cfg, 1).unwrap();
    let out = tempfile::tempdir().unwrap();
    let e = run_training(&cfg, &data, out.path(), None, |_| {}).unwrap_err();
    assert_eq!(e.exit_code(), 4, "{}", e);
}

#[test]
fn resume_from_a_foreign_checkpoint_is_rejected() {
    let data_dir = tempfile::tempdir().unwrap();
    let ds = dataset(data_dir.path(), 2);
    let cfg = tiny_train(Variant::Tac, None, 1);
    let data = prepare_dataset(&ds, &cfg, 1).unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = run_training(&cfg, &data, out.path(), None, |_| {}).unwrap();
    let mut other = tiny_train(Variant::Tac, None, 2);
    other.estimator.d_model = 12;
    let e = run_training(&other, &data, out.path(), Some(&r.weights_path), |_| {}).unwrap_err();
    assert_eq!(e.exit_code(), 4, "{}", e);
}
