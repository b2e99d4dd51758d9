//! Dataset-level evaluation under channel-configuration conditions.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use asabeam_core::beamform::{enhance, Diagnostics, EnhanceConfig, MaskSource, ScmMode};
use asabeam_core::estimator::{ModelWeights, Variant};
use asabeam_core::metrics::{MetricReport, MetricRow, MIXTURE_CONDITION};
use asabeam_core::scene::utterance_rng;
use asabeam_core::training::TrainingExample;
use asabeam_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EvalConfig;
use crate::dataset::{thread_pool, Dataset};
use crate::error::{AppError, Result};
use crate::weights_file::WeightsFile;

/// A system under evaluation.
#[derive(Clone, Debug)]
pub enum ModelSpec {
    Weights { id: String, weights: ModelWeights },
    Uniform,
    Recursive,
}

impl ModelSpec {
    /// `uniform`, `recursive`, or a weights-file path (id = file stem).
    pub fn parse(arg: &str) -> Result<Self> {
        match arg {
            "uniform" => Ok(ModelSpec::Uniform),
            "recursive" => Ok(ModelSpec::Recursive),
            path => {
                let f = WeightsFile::load(path)?;
                let id = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.to_string());
                Ok(ModelSpec::Weights { id, weights: f.weights })
            }
        }
    }

    pub fn id(&self) -> &str {
        match self {
            ModelSpec::Weights { id, .. } => id,
            ModelSpec::Uniform => "uniform",
            ModelSpec::Recursive => "recursive",
        }
    }

    fn mode(&self) -> ScmMode<'_> {
        match self {
            ModelSpec::Weights { weights, .. } => ScmMode::Asa(weights),
            ModelSpec::Uniform => ScmMode::Uniform,
            ModelSpec::Recursive => ScmMode::Recursive(None),
        }
    }

    /// Channel counts the model cannot take.
    fn accepts(&self, channels: usize) -> bool {
        match self {
            ModelSpec::Weights { weights, .. } => {
                let c = weights.config();
                c.variant == Variant::Tac || c.channels == Some(channels)
            }
            _ => true,
        }
    }
}

/// Diagnostics of one enhanced utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceDiagnostics {
    pub utterance_id: String,
    pub model: String,
    pub condition: String,
    pub channels: Vec<usize>,
    pub wall_ms: f64,
    #[serde(flatten)]
    pub diagnostics: Diagnostics,
}

/// A (model, condition) pair that was not run, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub model: String,
    pub condition: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub diagnostics: Vec<UtteranceDiagnostics>,
    pub skipped: Vec<Skipped>,
    pub config_hash: String,
}

fn stage_error(e: CoreError, utt: &str, model: &str, condition: &str) -> AppError {
    AppError::from(e).context(format!("utterance `{}`, model `{}`, condition `{}`", utt, model, condition))
}

fn evaluate_utterance(
    index: usize,
    ex: &TrainingExample,
    models: &[ModelSpec],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(Vec<MetricRow>, Vec<UtteranceDiagnostics>)> {
    let c = ex.mixture.num_channels();
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    let clean = ex.speech_image.channel(ex.reference);
    rows.push(
        MetricRow::evaluate(
            &ex.id,
            MIXTURE_CONDITION,
            MIXTURE_CONDITION,
            c,
            ex.mixture.channel(ex.reference),
            clean,
            cfg.filter_len,
            0.0,
        )
        .map_err(|e| stage_error(e, &ex.id, MIXTURE_CONDITION, MIXTURE_CONDITION))?,
    );
    for (k, cond) in cfg.conditions.iter().enumerate() {
        let tag = cond.to_string();
        let mut rng = utterance_rng(seed, ((k as u64) << 32) | index as u64);
        let cc = cond.channels(c, &mut rng).map_err(|e| stage_error(e, &ex.id, "-", &tag))?;
        let idx = cc.indices();
        let reference = cc.remap_reference(ex.reference);
        let (mix, speech, noise) = (ex.mixture.select(idx)?, ex.speech_image.select(idx)?, ex.noise_image.select(idx)?);
        let target = speech.channel(reference).to_vec();
        for model in models {
            if !model.accepts(idx.len()) {
                continue;
            }
            let config = EnhanceConfig {
                stft: cfg.stft,
                reference,
                loading: cfg.loading,
            };
            let masks = MaskSource::Oracle {
                speech: &speech,
                noise: &noise,
                kind: cfg.mask_kind,
            };
            let t0 = Instant::now();
            let out =
                enhance(&mix, masks, model.mode(), &config).map_err(|e| stage_error(e, &ex.id, model.id(), &tag))?;
            let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            let row = MetricRow::evaluate(
                &ex.id,
                &tag,
                model.id(),
                idx.len(),
                out.audio.channel(0),
                &target,
                cfg.filter_len,
                out.diagnostics.fallback_rate,
            )
            .map_err(|e| stage_error(e, &ex.id, model.id(), &tag))?;
            rows.push(row);
            diags.push(UtteranceDiagnostics {
                utterance_id: ex.id.clone(),
                model: model.id().to_string(),
                condition: tag.clone(),
                channels: idx.to_vec(),
                wall_ms,
                diagnostics: out.diagnostics,
            });
        }
    }
    Ok((rows, diags))
}

fn config_hash(cfg: &EvalConfig, models: &[ModelSpec], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    for m in models {
        h.update(m.id().as_bytes());
        h.update([0]);
        if let ModelSpec::Weights { weights, .. } = m {
            for t in weights.tensors() {
                for v in t.re() {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    h.update(seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
}

/// Enhances every utterance under every condition with every model and
/// scores the result against the reference-channel speech image. A mixture
/// baseline row is added per utterance. Concat models are skipped for
/// conditions whose channel count they cannot take.
pub fn evaluate_dataset(
    ds: &Dataset,
    models: &[ModelSpec],
    cfg: &EvalConfig,
    seed: u64,
    workers: usize,
) -> Result<EvalOutcome> {
    ds.check_files()?;
    let n = cfg.max_utterances.map_or(ds.len(), |m| m.min(ds.len()));
    let results: Vec<Result<(Vec<MetricRow>, Vec<UtteranceDiagnostics>)>> = thread_pool(workers)?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| evaluate_utterance(i, &ds.load(i)?, models, cfg, seed))
            .collect()
    });
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        let (r, d) = r?;
        rows.extend(r);
        diagnostics.extend(d);
    }
    let mut skipped = Vec::new();
    for m in models {
        for cond in &cfg.conditions {
            let tag = cond.to_string();
            if n > 0 && !rows.iter().any(|r| r.model == m.id() && r.condition == tag) {
                skipped.push(Skipped {
                    model: m.id().to_string(),
                    condition: tag,
                    reason: "model cannot take this channel count".into(),
                });
            }
        }
    }
    Ok(EvalOutcome {
        report: MetricReport::new(rows),
        diagnostics,
        skipped,
        config_hash: config_hash(cfg, models, seed),
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    models: Vec<&'a str>,
    conditions: Vec<String>,
    seed: u64,
    config_hash: &'a str,
    utterances: usize,
    aggregates: &'a [asabeam_core::metrics::Aggregate],
    skipped: &'a [Skipped],
}

/// Writes `metrics.csv`, `summary.json` and `diagnostics.jsonl`.
pub fn write_report(
    outcome: &EvalOutcome,
    models: &[ModelSpec],
    cfg: &EvalConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let csv_path = out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| AppError::io(&csv_path, e))?;
    for r in &outcome.report.rows {
        w.serialize(r).map_err(|e| AppError::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| AppError::io(&csv_path, e))?;

    let summary = Summary {
        models: models.iter().map(ModelSpec::id).collect(),
        conditions: cfg.conditions.iter().map(|c| c.to_string()).collect(),
        seed,
        config_hash: &outcome.config_hash,
        utterances: outcome.report.rows.iter().filter(|r| r.condition == MIXTURE_CONDITION).count(),
        aggregates: &outcome.report.aggregates,
        skipped: &outcome.skipped,
    };
    let json_path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    fs::write(&json_path, text).map_err(|e| AppError::io(&json_path, e))?;

    let diag_path = out_dir.join("diagnostics.jsonl");
    let lines: String = outcome
        .diagnostics
        .iter()
        .map(|d| serde_json::to_string(d).expect("diagnostics serialize") + "\n")
        .collect();
    fs::write(&diag_path, lines).map_err(|e| AppError::io(&diag_path, e))?;
    Ok(vec![csv_path, json_path, diag_path])
}
