//! The training command: data loading, the step loop, the loss-curve CSV
//! and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use asabeam_core::estimator::{init_weights, ModelWeights};
use asabeam_core::training::{PreparedExample, StepRecord, TrainConfig, Trainer};
use rayon::prelude::*;

use crate::dataset::{thread_pool, Dataset};
use crate::error::{AppError, Result};
use crate::weights_file::WeightsFile;

pub const LOSS_CSV: &str = "loss.csv";
pub const FINAL_WEIGHTS: &str = "weights.asaw";
pub const FAILURE_CHECKPOINT: &str = "checkpoint_failed.asaw";
const CSV_HEADER: &str = "step,loss,c_prime,wall_ms";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub weights_path: PathBuf,
    pub loss_csv: PathBuf,
    /// Steps run by this invocation.
    pub records: Vec<StepRecord>,
}

/// Loads, clips and transforms every utterance of the manifest.
pub fn prepare_dataset(ds: &Dataset, cfg: &TrainConfig, workers: usize) -> Result<Vec<PreparedExample>> {
    ds.check_files()?;
    let prepared: Vec<Result<PreparedExample>> = thread_pool(workers)?.install(|| {
        (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let ex = ds.load(i)?;
                let len = (cfg.max_seconds * ex.mixture.sample_rate() as f64).floor() as usize;
                Ok(PreparedExample::new(&ex.truncated(len), cfg.stft)?)
            })
            .collect()
    });
    prepared.into_iter().collect()
}

fn checkpoint(trainer: &Trainer) -> WeightsFile {
    let cfg = trainer.config();
    let mut f = WeightsFile::new(trainer.weights().clone());
    f.adam = Some(trainer.adam().clone());
    f.metadata.insert(
        "channel_randomization".into(),
        serde_json::to_value(cfg.channel_randomization).expect("serializes"),
    );
    f.metadata.insert("seed".into(), cfg.seed.into());
    f.metadata.insert("steps_completed".into(), trainer.step_index().into());
    f.metadata.insert("train_config".into(), serde_json::to_value(cfg).expect("serializes"));
    f
}

/// Opens the loss CSV; on resume keeps only rows before the resume step.
fn open_curve(path: &Path, resume_step: Option<u64>) -> Result<File> {
    let mut kept = vec![CSV_HEADER.to_string()];
    if let (Some(step), Ok(f)) = (resume_step, File::open(path)) {
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| AppError::io(path, e))?;
            let s: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
            if matches!(s, Some(s) if s < step) {
                kept.push(line);
            }
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(|e| AppError::io(path, e))?;
    for line in kept {
        writeln!(f, "{}", line).map_err(|e| AppError::io(path, e))?;
    }
    Ok(f)
}

/// Runs the remaining steps, appending to `loss.csv` and writing
/// `checkpoint_<step>.asaw` every `checkpoint_every` steps and
/// `weights.asaw` at the end. On failure the current state is saved to
/// `checkpoint_failed.asaw` before the error is returned.
pub fn run_training(
    cfg: &TrainConfig,
    data: &[PreparedExample],
    out_dir: impl AsRef<Path>,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let mut trainer = match resume {
        None => Trainer::new(cfg.clone(), init_weights(&cfg.estimator, cfg.seed)?)?,
        Some(p) => {
            let f = WeightsFile::load(p)?;
            let adam = f
                .adam
                .ok_or_else(|| AppError::format(p, "checkpoint carries no optimizer state"))?;
            if f.weights.config() != &cfg.estimator {
                return Err(AppError::Mismatch(format!(
                    "checkpoint {} was trained with a different estimator configuration",
                    p.display()
                )));
            }
            Trainer::resume(cfg.clone(), f.weights, adam)?
        }
    };
    trainer.check_data(data)?;
    let csv_path = out_dir.join(LOSS_CSV);
    let mut csv = open_curve(&csv_path, resume.map(|_| trainer.step_index()))?;
    let mut records = Vec::new();
    while !trainer.is_done() {
        let t0 = Instant::now();
        let rec = match trainer.step(data) {
            Ok(r) => r,
            Err(e) => {
                let path = out_dir.join(FAILURE_CHECKPOINT);
                checkpoint(&trainer).save(&path)?;
                return Err(AppError::from(e).context(format!(
                    "step {} (state saved to {})",
                    trainer.step_index(),
                    path.display()
                )));
            }
        };
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        writeln!(csv, "{},{},{},{:.3}", rec.step, rec.loss, rec.c_prime, wall_ms)
            .map_err(|e| AppError::io(&csv_path, e))?;
        on_step(&rec);
        records.push(rec);
        let done = trainer.step_index();
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every as u64 == 0 {
            checkpoint(&trainer).save(out_dir.join(format!("checkpoint_{:06}.asaw", done)))?;
        }
    }
    csv.flush().map_err(|e| AppError::io(&csv_path, e))?;
    let weights_path = out_dir.join(FINAL_WEIGHTS);
    checkpoint(&trainer).save(&weights_path)?;
    let (weights, _) = trainer.into_parts();
    Ok(TrainOutcome {
        weights,
        weights_path,
        loss_csv: csv_path,
        records,
    })
}
