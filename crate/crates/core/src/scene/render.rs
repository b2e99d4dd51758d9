use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{ArrayGeometry, Point};
use super::rir::{check_inside, RirSynth};
use super::source::{noise_like, speech_like, white_noise};
use crate::dsp::{convolve, AudioBuffer};
use crate::error::{Error, Result};

fn default_traj_points() -> usize {
    128
}

fn default_sensor_noise_db() -> f64 {
    -30.0
}

/// Everything needed to reproduce one simulated utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub room_dims: Point,
    pub t60: f64,
    pub src_start: Point,
    pub src_end: Point,
    #[serde(default = "default_traj_points")]
    pub n_traj_points: usize,
    pub snr_db: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub geometry: ArrayGeometry,
    pub array_origin: Point,
    pub num_samples: usize,
    /// Static point noise sources; their images form the noise component.
    pub noise_positions: Vec<Point>,
    /// Level of spatially white sensor noise relative to the point-noise
    /// image power at the reference channel.
    #[serde(default = "default_sensor_noise_db")]
    pub sensor_noise_db: f64,
}

impl SceneSpec {
    pub fn mic_positions(&self) -> Vec<Point> {
        self.geometry
            .mic_positions()
            .iter()
            .map(|p| [p[0] + self.array_origin[0], p[1] + self.array_origin[1], p[2] + self.array_origin[2]])
            .collect()
    }

    /// Source position at trajectory point `k`.
    pub fn trajectory_point(&self, k: usize) -> Point {
        let u = if self.n_traj_points > 1 {
            k as f64 / (self.n_traj_points - 1) as f64
        } else {
            0.0
        };
        let mut p = [0.0; 3];
        for (i, v) in p.iter_mut().enumerate() {
            *v = self.src_start[i] + (self.src_end[i] - self.src_start[i]) * u;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.n_traj_points == 0 {
            return Err(Error::Input("n_traj_points must be at least 1".into()));
        }
        if !(self.t60 >= 0.0) {
            return Err(Error::Input(format!("T60 must be non-negative, got {}", self.t60)));
        }
        if self.sample_rate == 0 || !self.snr_db.is_finite() {
            return Err(Error::Input("sample rate and SNR must be valid".into()));
        }
        if self.num_samples < self.n_traj_points {
            return Err(Error::Input(format!(
                "{} samples cannot be split into {} trajectory segments",
                self.num_samples, self.n_traj_points
            )));
        }
        // The trajectory is a segment; its endpoints inside a box imply the rest is.
        check_inside(&self.room_dims, &self.src_start, "trajectory start")?;
        check_inside(&self.room_dims, &self.src_end, "trajectory end")?;
        for m in self.mic_positions() {
            check_inside(&self.room_dims, &m, "microphone")?;
        }
        for n in &self.noise_positions {
            check_inside(&self.room_dims, n, "noise source")?;
        }
        Ok(())
    }
}

/// Noisy multichannel mixture together with its clean components.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRender {
    pub mixture: AudioBuffer,
    pub speech_image: AudioBuffer,
    pub noise_image: AudioBuffer,
}

/// Partition of unity over `len` samples: `parts` equal segments with linear
/// crossfades of `xfade` samples centred on the interior boundaries. Returns
/// `(start, weights)` per segment.
pub(crate) fn segment_windows(len: usize, parts: usize, xfade: usize) -> Vec<(usize, Vec<f64>)> {
    let bounds: Vec<usize> = (0..=parts).map(|k| (k * len + parts / 2) / parts).collect();
    let min_seg = bounds.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0);
    let x = xfade.min(min_seg).max(1) as f64;
    // Share of the later segment at sample n around boundary b.
    let ramp = |b: usize, n: usize| ((n as f64 + 0.5 - (b as f64 - x / 2.0)) / x).clamp(0.0, 1.0);
    let half = (x / 2.0).ceil() as usize;
    (0..parts)
        .map(|k| {
            let start = if k == 0 { 0 } else { bounds[k].saturating_sub(half) };
            let end = if k + 1 == parts { len } else { (bounds[k + 1] + half).min(len) };
            let w = (start..end)
                .map(|n| {
                    let rise = if k == 0 { 1.0 } else { ramp(bounds[k], n) };
                    let fall = if k + 1 == parts { 0.0 } else { ramp(bounds[k + 1], n) };
                    rise - fall
                })
                .collect();
            (start, w)
        })
        .collect()
}

fn mono(dry: &AudioBuffer) -> Result<&[f64]> {
    if dry.num_channels() != 1 {
        return Err(Error::Input(format!("dry signal must be mono, got {} channels", dry.num_channels())));
    }
    Ok(dry.channel(0))
}

/// Reverberant image of a source moving along the scene trajectory, at every
/// microphone. Output has the dry signal's length.
pub fn render_moving_source(dry: &AudioBuffer, spec: &SceneSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    let x = mono(dry)?;
    let len = x.len();
    if len < spec.n_traj_points {
        return Err(Error::Input(format!(
            "dry signal of {} samples is shorter than {} trajectory points",
            len, spec.n_traj_points
        )));
    }
    let synth = RirSynth::new(spec.room_dims, spec.t60, spec.sample_rate, None)?;
    let mics = spec.mic_positions();
    let xfade = (0.010 * spec.sample_rate as f64).round() as usize;
    let mut out = vec![vec![0.0; len]; mics.len()];
    for (k, (start, w)) in segment_windows(len, spec.n_traj_points, xfade).into_iter().enumerate() {
        let seg: Vec<f64> = w.iter().enumerate().map(|(i, g)| g * x[start + i]).collect();
        let src = spec.trajectory_point(k);
        for (m, mic) in mics.iter().enumerate() {
            let h = synth.rir(&src, mic)?;
            let y = convolve(&seg, &h);
            for (i, v) in y.iter().enumerate().take(len - start) {
                out[m][start + i] += v;
            }
        }
    }
    AudioBuffer::new(spec.sample_rate, out)
}

/// Reverberant image of a static source at every microphone.
pub fn render_static_source(dry: &AudioBuffer, pos: &Point, spec: &SceneSpec) -> Result<AudioBuffer> {
    let x = mono(dry)?;
    let synth = RirSynth::new(spec.room_dims, spec.t60, spec.sample_rate, None)?;
    let out = spec
        .mic_positions()
        .iter()
        .map(|mic| {
            let mut y = convolve(x, &synth.rir(pos, mic)?);
            y.truncate(x.len());
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    AudioBuffer::new(spec.sample_rate, out)
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Scales the noise so that the speech-to-noise power ratio at `reference`
/// equals `snr_db`, and sums the components.
pub fn mix_at_snr(
    speech_image: &AudioBuffer,
    noise_image: &AudioBuffer,
    snr_db: f64,
    reference: usize,
) -> Result<SceneRender> {
    if speech_image.num_channels() != noise_image.num_channels() || speech_image.len() != noise_image.len() {
        return Err(Error::Input("speech and noise images differ in shape".into()));
    }
    if reference >= speech_image.num_channels() {
        return Err(Error::Input(format!("reference channel {} out of range", reference)));
    }
    let ps = power(speech_image.channel(reference));
    let pn = power(noise_image.channel(reference));
    if !(ps > 0.0) || !(pn > 0.0) {
        return Err(Error::Input("speech or noise has zero power at the reference channel".into()));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise_image = noise_image.scaled(gain);
    Ok(SceneRender {
        mixture: speech_image.sum(&noise_image)?,
        speech_image: speech_image.clone(),
        noise_image,
    })
}

/// Independent random stream `stream` of the utterance seeded by `seed`.
pub fn utterance_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Synthesizes dry speech and noise from the scene seed and renders the
/// complete noisy scene.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneRender> {
    spec.validate()?;
    let dry = speech_like(spec.num_samples, spec.sample_rate, &mut utterance_rng(spec.seed, 0));
    render_scene_with(&AudioBuffer::mono(spec.sample_rate, dry)?, spec)
}

/// As [`render_scene`] but with a caller-supplied dry speech signal, which is
/// truncated or zero-padded to the scene length.
pub fn render_scene_with(dry: &AudioBuffer, spec: &SceneSpec) -> Result<SceneRender> {
    spec.validate()?;
    let mut x = mono(dry)?.to_vec();
    x.resize(spec.num_samples, 0.0);
    let speech = render_moving_source(&AudioBuffer::mono(spec.sample_rate, x)?, spec)?;
    let c = spec.geometry.num_mics();
    let mut noise = AudioBuffer::zeros(spec.sample_rate, c, spec.num_samples)?;
    for (i, pos) in spec.noise_positions.iter().enumerate() {
        let n = noise_like(spec.num_samples, &mut utterance_rng(spec.seed, 1 + i as u64));
        noise = noise.sum(&render_static_source(&AudioBuffer::mono(spec.sample_rate, n)?, pos, spec)?)?;
    }
    let r = spec.geometry.reference_index();
    let level = if spec.noise_positions.is_empty() {
        1.0
    } else {
        (power(noise.channel(r)) * 10f64.powf(spec.sensor_noise_db / 10.0)).sqrt()
    };
    let mut rng = utterance_rng(spec.seed, 1000);
    let sensor = (0..c)
        .map(|_| white_noise(spec.num_samples, &mut rng).into_iter().map(|v| v * level).collect())
        .collect();
    let noise = noise.sum(&AudioBuffer::new(spec.sample_rate, sensor)?)?;
    mix_at_snr(&speech, &noise, spec.snr_db, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::rir::simulate_rir;

    fn spec(t60: f64, start: Point, end: Point, points: usize, len: usize) -> SceneSpec {
        SceneSpec {
            room_dims: [4.0, 3.5, 2.5],
            t60,
            src_start: start,
            src_end: end,
            n_traj_points: points,
            snr_db: 5.0,
            sample_rate: 16000,
            seed: 11,
            geometry: ArrayGeometry::linear(2, 0.1).unwrap(),
            array_origin: [2.0, 1.0, 1.2],
            num_samples: len,
            noise_positions: alloc::vec![[0.5, 3.0, 1.5]],
            sensor_noise_db: -30.0,
        }
    }

    fn dry(len: usize, seed: u64) -> AudioBuffer {
        AudioBuffer::mono(16000, white_noise(len, &mut utterance_rng(seed, 0))).unwrap()
    }

    #[test]
    fn windows_partition_unity() {
        for (len, parts, xf) in [(1000, 7, 160), (128, 128, 160), (5000, 1, 160), (999, 10, 40)] {
            let mut acc = vec![0.0; len];
            for (s, w) in segment_windows(len, parts, xf) {
                for (i, v) in w.iter().enumerate() {
                    assert!(*v >= -1e-15 && *v <= 1.0 + 1e-15);
                    acc[s + i] += v;
                }
            }
            assert!(acc.iter().all(|v| (v - 1.0).abs() < 1e-12), "{} {} {}", len, parts, xf);
        }
    }

    #[test]
    fn single_point_equals_plain_convolution() {
        let s = spec(0.15, [1.0, 2.5, 1.5], [3.0, 2.5, 1.5], 1, 3000);
        let d = dry(3000, 1);
        let out = render_moving_source(&d, &s).unwrap();
        for (m, mic) in s.mic_positions().iter().enumerate() {
            let h = simulate_rir(s.room_dims, s.src_start, *mic, s.t60, 16000, None).unwrap();
            let mut y = convolve(d.channel(0), &h);
            y.truncate(3000);
            let err = y.iter().zip(out.channel(m)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{}", err);
        }
    }

    #[test]
    fn static_trajectory_equals_single_convolution() {
        let p = [1.0, 2.5, 1.5];
        let s = spec(0.1, p, p, 16, 4000);
        let d = dry(4000, 2);
        let moving = render_moving_source(&d, &s).unwrap();
        let fixed = render_static_source(&d, &p, &s).unwrap();
        for m in 0..2 {
            let err = moving
                .channel(m)
                .iter()
                .zip(fixed.channel(m))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "{}", err);
        }
    }

    #[test]
    fn approaching_source_gets_louder() {
        let s = spec(0.0, [0.4, 3.0, 1.2], [1.9, 1.2, 1.2], 32, 16000);
        let out = render_moving_source(&dry(16000, 3), &s).unwrap();
        let e: Vec<f64> = out.channel(0).chunks(2000).map(|c| c.iter().map(|v| v * v).sum()).collect();
        assert!(e.windows(2).all(|w| w[1] > w[0]), "{:?}", e);
    }

    #[test]
    fn trajectory_outside_room_is_rejected() {
        let s = spec(0.1, [1.0, 2.5, 1.5], [5.0, 2.5, 1.5], 4, 1000);
        assert!(matches!(render_moving_source(&dry(1000, 4), &s), Err(Error::Input(_))));
        let s = spec(0.1, [1.0, 2.5, 1.5], [2.0, 2.5, 1.5], 4, 1000);
        assert!(render_moving_source(&dry(3, 4), &s).is_err());
    }

    #[test]
    fn snr_mixing() {
        let sp = AudioBuffer::new(16000, vec![white_noise(500, &mut utterance_rng(1, 0)); 2]).unwrap();
        let nz = AudioBuffer::new(16000, vec![white_noise(500, &mut utterance_rng(2, 0)); 2]).unwrap();
        for snr in [0.0, 10.0, -3.5] {
            let r = mix_at_snr(&sp, &nz, snr, 1).unwrap();
            let ratio = power(r.speech_image.channel(1)) / power(r.noise_image.channel(1));
            assert!((ratio / 10f64.powf(snr / 10.0) - 1.0).abs() < 1e-10);
            let sum = r.speech_image.sum(&r.noise_image).unwrap();
            assert_eq!(sum, r.mixture);
        }
        let r1 = mix_at_snr(&sp, &nz, 4.0, 0).unwrap();
        let r2 = mix_at_snr(&sp.scaled(2.0), &nz.scaled(2.0), 4.0, 0).unwrap();
        for (a, b) in r1.mixture.channel(0).iter().zip(r2.mixture.channel(0)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let zero = AudioBuffer::zeros(16000, 2, 500).unwrap();
        assert!(mix_at_snr(&sp, &zero, 0.0, 0).is_err());
        assert!(mix_at_snr(&zero, &nz, 0.0, 0).is_err());
    }

    #[test]
    fn rendered_scene_is_additive_and_deterministic() {
        let s = spec(0.1, [1.0, 2.5, 1.5], [3.0, 2.6, 1.5], 8, 4000);
        let a = render_scene(&s).unwrap();
        let b = render_scene(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.speech_image.sum(&a.noise_image).unwrap(), a.mixture);
    }
}
