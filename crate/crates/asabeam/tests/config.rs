mod common;

use asabeam::config::RunConfig;
use asabeam::error::AppError;
use asabeam_core::estimator::Variant;
use asabeam_core::metrics::Condition;
use common::{tiny_run_config, tiny_train};

#[test]
fn empty_document_takes_defaults() {
    let cfg = RunConfig::from_json("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.evaluate.conditions, vec![Condition::Identity]);
}

#[test]
fn round_trips_through_json() {
    let cfg = tiny_run_config(5, Some(tiny_train(Variant::Tac, None, 3)));
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
}

#[test]
fn errors_name_the_field_path() {
    let e = RunConfig::from_json(r#"{"scene": {"duration_s": "long"}}"#).unwrap_err();
    assert!(matches!(e, AppError::Config(_)));
    assert!(e.to_string().contains("scene.duration_s"), "{}", e);
    assert_eq!(e.exit_code(), 2);

    let e = RunConfig::from_json(r#"{"evaluate": {"conditions": ["first:x"]}}"#).unwrap_err();
    assert!(e.to_string().contains("evaluate.conditions"), "{}", e);
}

#[test]
fn unknown_keys_are_rejected() {
    let e = RunConfig::from_json(r#"{"seeed": 3}"#).unwrap_err();
    assert!(e.to_string().contains("seeed"), "{}", e);
    let e = RunConfig::from_json(r#"{"paths": {"manifest": "m.json", "oops": 1}}"#).unwrap_err();
    assert!(e.to_string().contains("paths"), "{}", e);
}

#[test]
fn semantic_validation_runs_before_any_work() {
    let e = RunConfig::from_json(r#"{"workers": 0}"#).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let e = RunConfig::from_json(r#"{"scene": {"geometry": "chime"}}"#).unwrap_err();
    assert!(e.to_string().contains("scene"), "{}", e);
    let mut cfg = tiny_run_config(0, Some(tiny_train(Variant::Concat, Some(5), 3)));
    cfg.train.as_mut().unwrap().channel_randomization = asabeam_core::training::ChannelRandomization::Random;
    let e = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap_err();
    assert!(e.to_string().contains("train"), "{}", e);
}

#[test]
fn unreadable_file_is_an_io_error() {
    assert_eq!(RunConfig::from_file("/nonexistent/cfg.json").unwrap_err().exit_code(), 3);
}
