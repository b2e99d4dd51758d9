//! Simulated datasets on disk: WAV triples plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use asabeam_core::dsp::AudioBuffer;
use asabeam_core::scene::{render_scene, sample_scene, ChannelConfig, SceneDistribution, SceneSpec};
use asabeam_core::training::TrainingExample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::wav::{quantize_f32, read_wav, write_wav};

pub const MANIFEST_FORMAT: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub scene: SceneSpec,
    /// Channels of the stored WAVs relative to the scene geometry.
    pub channels: ChannelConfig,
    pub reference: usize,
    /// Paths relative to the manifest directory.
    pub mixture: String,
    pub speech_image: String,
    pub noise_image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub distribution: SceneDistribution,
    pub utterances: Vec<ManifestEntry>,
}

/// Summary printed after simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub utterances: usize,
    pub channels: usize,
    pub total_seconds: f64,
    pub mean_t60: f64,
    pub mean_snr_db: f64,
}

impl Manifest {
    pub fn stats(&self) -> DatasetStats {
        let n = self.utterances.len();
        let mean = |f: fn(&ManifestEntry) -> f64| {
            if n == 0 {
                0.0
            } else {
                self.utterances.iter().map(f).sum::<f64>() / n as f64
            }
        };
        DatasetStats {
            utterances: n,
            channels: self.utterances.first().map(|e| e.channels.len()).unwrap_or(0),
            total_seconds: self
                .utterances
                .iter()
                .map(|e| e.scene.num_samples as f64 / e.scene.sample_rate as f64)
                .sum(),
            mean_t60: mean(|e| e.scene.t60),
            mean_snr_db: mean(|e| e.scene.snr_db),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AppError::Config(format!("cannot start {} workers: {}", workers, e)))
}

fn render_one(dist: &SceneDistribution, seed: u64, index: usize, out_dir: &Path) -> Result<ManifestEntry> {
    let scene = sample_scene(dist, seed, index as u64)?;
    let r = render_scene(&scene)?;
    let speech = quantize_f32(&r.speech_image);
    let noise = quantize_f32(&r.noise_image);
    let mixture = speech.sum(&noise)?;
    let id = format!("utt{:05}", index);
    let dir = out_dir.join(&id);
    fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    let rel = |name: &str| format!("{}/{}.wav", id, name);
    write_wav(out_dir.join(rel("mixture")), &mixture)?;
    write_wav(out_dir.join(rel("speech_image")), &speech)?;
    write_wav(out_dir.join(rel("noise_image")), &noise)?;
    Ok(ManifestEntry {
        id: id.clone(),
        channels: ChannelConfig::identity(scene.geometry.num_mics()),
        reference: scene.geometry.reference_index(),
        scene,
        mixture: rel("mixture"),
        speech_image: rel("speech_image"),
        noise_image: rel("noise_image"),
    })
}

/// Simulates `n` utterances into `out_dir` and writes the manifest. Every
/// utterance depends only on `(seed, index)`, so the worker count does not
/// change the output.
pub fn generate_dataset(
    dist: &SceneDistribution,
    n: usize,
    out_dir: impl AsRef<Path>,
    seed: u64,
    workers: usize,
) -> Result<(PathBuf, Manifest)> {
    dist.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let entries: Vec<Result<ManifestEntry>> =
        thread_pool(workers)?.install(|| (0..n).into_par_iter().map(|i| render_one(dist, seed, i, out_dir)).collect());
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        seed,
        distribution: dist.clone(),
        utterances: entries.into_iter().collect::<Result<_>>()?,
    };
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_json()).map_err(|e| AppError::io(&path, e))?;
    Ok((path, manifest))
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let manifest: Manifest =
            serde_path_to_error::deserialize(de).map_err(|e| AppError::format(path, e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(AppError::format(path, format!("unsupported manifest format {}", manifest.format)));
        }
        Ok(Dataset {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.utterances.is_empty()
    }

    /// Fails with one I/O error naming every utterance whose files are missing.
    pub fn check_files(&self) -> Result<()> {
        let missing: Vec<&str> = self
            .manifest
            .utterances
            .iter()
            .filter(|e| {
                [&e.mixture, &e.speech_image, &e.noise_image]
                    .iter()
                    .any(|p| !self.dir.join(p).is_file())
            })
            .map(|e| e.id.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(AppError::io(&self.dir, format!("missing audio for utterances: {}", missing.join(", "))))
        }
    }

    pub fn load(&self, index: usize) -> Result<TrainingExample> {
        let e = &self.manifest.utterances[index];
        let read = |p: &str| -> Result<AudioBuffer> { read_wav(self.dir.join(p)) };
        Ok(TrainingExample {
            id: e.id.clone(),
            mixture: read(&e.mixture)?,
            speech_image: read(&e.speech_image)?,
            noise_image: read(&e.noise_image)?,
            reference: e.reference,
        })
    }
}
