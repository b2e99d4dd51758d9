//! Subcommands of the `asabeam` binary. Flags override the config file.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use asabeam_core::beamform::{enhance, EnhanceConfig, MaskSource, ScmMode};
use asabeam_core::dsp::{AudioBuffer, StftConfig};
use asabeam_core::estimator::Variant;
use asabeam_core::metrics::Condition;
use asabeam_core::training::ChannelRandomization;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{generate_dataset, Dataset};
use crate::error::{AppError, Result};
use crate::evaluate::{evaluate_dataset, write_report, ModelSpec};
use crate::gradsuite::{format_table, run_suite, Scale};
use crate::train_loop::{prepare_dataset, run_training};
use crate::wav::{read_wav, write_wav};
use crate::weights_file::WeightsFile;

#[derive(Debug, Parser)]
#[command(name = "asabeam", version, about = "Mask-based MVDR beamforming with attention-based SCM aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset of moving-speaker scenes.
    Simulate(SimulateArgs),
    /// Train an attention-weight estimator.
    Train(TrainArgs),
    /// Enhance one multichannel WAV file.
    Enhance(EnhanceArgs),
    /// Score models on a dataset under channel conditions.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of every random draw of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-utterance parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory for the WAV files and `manifest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of utterances.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Fixed,
    Random,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for weights, checkpoints and `loss.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Fixed full array or a random channel subset per minibatch.
    #[arg(long, value_enum)]
    pub channel_config: Option<ChannelArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Asa,
    Recursive,
    Uniform,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// JSON run config; its `evaluate` section supplies STFT, loading and
    /// mask settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Multichannel mixture WAV.
    #[arg(long)]
    pub input: PathBuf,
    /// Mono enhanced WAV (float32).
    #[arg(long)]
    pub output: PathBuf,
    /// Estimator weights; required by `--mode asa`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// SCM aggregation.
    #[arg(long, value_enum, default_value_t = ModeArg::Asa)]
    pub mode: ModeArg,
    /// Reference microphone.
    #[arg(long, default_value_t = 0)]
    pub reference: usize,
    /// Speech image WAV used for the oracle masks.
    #[arg(long)]
    pub speech: PathBuf,
    /// Noise image WAV; defaults to mixture minus speech image.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Diagnostics JSON path; defaults to the output path with `.json`.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// STFT frame length; defaults to the one the weights were built for.
    #[arg(long)]
    pub frame_len: Option<usize>,
    /// STFT hop; defaults to a quarter frame.
    #[arg(long)]
    pub hop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Evaluation manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Weights file, `uniform` or `recursive`; repeatable.
    #[arg(long = "weights", required = true)]
    pub weights: Vec<String>,
    /// Comma-separated conditions: identity, permute, first:K, random_subset:K.
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<String>>,
    /// Output directory for `metrics.csv`, `summary.json` and `diagnostics.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Distortion filter length of the SDR.
    #[arg(long)]
    pub filter_len: Option<usize>,
    /// Evaluate only the first utterances.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Problem size.
    #[arg(long, value_enum, default_value_t = Scale::Tiny)]
    pub scale: Scale,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| AppError::Config(format!("missing `--{}` (or `paths` entry in the config)", name)))
}

fn print_json(value: &impl Serialize) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", text);
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let out = required(a.out, &cfg.paths.out_dir, "out")?;
    let (path, manifest) = generate_dataset(&cfg.scene, a.n, &out, cfg.seed, cfg.workers)?;
    println!("{}", path.display());
    print_json(&manifest.stats());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let mut train = cfg
        .train
        .clone()
        .ok_or_else(|| AppError::Config("the config has no `train` section".into()))?;
    train.seed = cfg.seed;
    if let Some(s) = a.steps {
        train.steps = s;
    }
    if let Some(c) = a.channel_config {
        train.channel_randomization = match c {
            ChannelArg::Fixed => ChannelRandomization::Fixed,
            ChannelArg::Random => ChannelRandomization::Random,
        };
    }
    train.validate().map_err(|e| AppError::Config(format!("train: {}", e)))?;
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(a.out, &cfg.paths.out_dir, "out")?;
    let ds = Dataset::open(&manifest)?;
    let data = prepare_dataset(&ds, &train, cfg.workers)?;
    let outcome = run_training(&train, &data, &out, a.resume.as_deref(), |r| {
        eprintln!("step {:>6}  loss {:>10.4}  C' {}", r.step, r.loss, r.c_prime);
    })?;
    println!("{}", outcome.weights_path.display());
    println!("{}", outcome.loss_csv.display());
    Ok(())
}

fn subtract(mix: &AudioBuffer, speech: &AudioBuffer) -> Result<AudioBuffer> {
    let channels = mix
        .channels()
        .iter()
        .zip(speech.channels())
        .map(|(m, s)| m.iter().zip(s).map(|(a, b)| a - b).collect())
        .collect();
    Ok(AudioBuffer::new(mix.sample_rate(), channels)?)
}

fn check_same_layout(mix: &AudioBuffer, other: &AudioBuffer, what: &Path) -> Result<()> {
    if other.num_channels() != mix.num_channels() || other.len() != mix.len() || other.sample_rate() != mix.sample_rate() {
        return Err(AppError::Mismatch(format!(
            "{} has {} channels x {} samples at {} Hz, the mixture {} x {} at {} Hz",
            what.display(),
            other.num_channels(),
            other.len(),
            other.sample_rate(),
            mix.num_channels(),
            mix.len(),
            mix.sample_rate()
        )));
    }
    Ok(())
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let run_cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let weights = match (&a.weights, a.mode) {
        (Some(p), ModeArg::Asa) => Some(WeightsFile::load(p)?.weights),
        (None, ModeArg::Asa) => return Err(AppError::Config("`--mode asa` needs `--weights`".into())),
        _ => None,
    };
    let mut stft = run_cfg.evaluate.stft;
    if let Some(w) = &weights {
        let bins = w.config().num_bins;
        stft.frame_len = 2 * bins.saturating_sub(1);
        stft.hop = stft.frame_len / 4;
    }
    if let Some(f) = a.frame_len {
        stft.frame_len = f;
        stft.hop = f / 4;
    }
    if let Some(h) = a.hop {
        stft.hop = h;
    }
    let config = EnhanceConfig {
        stft: StftConfig { ..stft },
        reference: a.reference,
        loading: run_cfg.evaluate.loading,
    };
    config.stft.validate().map_err(|e| AppError::Config(format!("stft: {}", e)))?;

    let mix = read_wav(&a.input)?;
    if mix.num_channels() < 2 {
        return Err(AppError::Mismatch(format!(
            "{} has {} channel; beamforming needs at least 2",
            a.input.display(),
            mix.num_channels()
        )));
    }
    if let Some(w) = &weights {
        let c = w.config();
        if c.variant == Variant::Concat && c.channels != Some(mix.num_channels()) {
            return Err(AppError::Mismatch(format!(
                "concat model built for {} channels, input has {}",
                c.channels.unwrap_or(0),
                mix.num_channels()
            )));
        }
    }
    let speech = read_wav(&a.speech)?;
    check_same_layout(&mix, &speech, &a.speech)?;
    let noise = match &a.noise {
        Some(p) => {
            let n = read_wav(p)?;
            check_same_layout(&mix, &n, p)?;
            n
        }
        None => subtract(&mix, &speech)?,
    };
    let mode = match (a.mode, &weights) {
        (ModeArg::Asa, Some(w)) => ScmMode::Asa(w),
        (ModeArg::Recursive, _) => ScmMode::Recursive(None),
        _ => ScmMode::Uniform,
    };
    let masks = MaskSource::Oracle {
        speech: &speech,
        noise: &noise,
        kind: run_cfg.evaluate.mask_kind,
    };
    let t0 = Instant::now();
    let out = enhance(&mix, masks, mode, &config)?;
    #[derive(Serialize)]
    struct Report<'a> {
        input: &'a Path,
        output: &'a Path,
        wall_ms: f64,
        #[serde(flatten)]
        diagnostics: &'a asabeam_core::beamform::Diagnostics,
    }
    let report = Report {
        input: &a.input,
        output: &a.output,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        diagnostics: &out.diagnostics,
    };
    write_wav(&a.output, &out.audio)?;
    let diag_path = a.diagnostics.unwrap_or_else(|| a.output.with_extension("json"));
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    std::fs::write(&diag_path, &text).map_err(|e| AppError::io(&diag_path, e))?;
    println!("{}", text);
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(list) = &a.conditions {
        cfg.evaluate.conditions = list
            .iter()
            .map(|s| s.trim().parse::<Condition>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AppError::Config(format!("--conditions: {}", e)))?;
    }
    if let Some(f) = a.filter_len {
        cfg.evaluate.filter_len = f;
    }
    if let Some(l) = a.limit {
        cfg.evaluate.max_utterances = Some(l);
    }
    cfg.validate()?;
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(a.out, &cfg.paths.out_dir, "out")?;
    let models = a.weights.iter().map(|w| ModelSpec::parse(w)).collect::<Result<Vec<_>>>()?;
    let ds = Dataset::open(&manifest)?;
    let outcome = evaluate_dataset(&ds, &models, &cfg.evaluate, cfg.seed, cfg.workers)?;
    for p in write_report(&outcome, &models, &cfg.evaluate, cfg.seed, &out)? {
        println!("{}", p.display());
    }
    for s in &outcome.skipped {
        eprintln!("skipped {} under {}: {}", s.model, s.condition, s.reason);
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let rows = run_suite(a.scale);
    print!("{}", format_table(&rows));
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(AppError::Numeric(format!("gradient checks failed: {}", failed.join(", "))))
    }
}
