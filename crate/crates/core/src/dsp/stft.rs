use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::fft::Fft;
use crate::error::{Error, Result};
use crate::tensor::{LinearMap, Tensor};

/// Multichannel time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Input("all channels must have equal length".into()));
            }
        }
        Ok(AudioBuffer { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        AudioBuffer::new(sample_rate, vec![samples])
    }

    pub fn zeros(sample_rate: u32, channels: usize, len: usize) -> Result<Self> {
        AudioBuffer::new(sample_rate, vec![vec![0.0; len]; channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// New buffer holding the listed channels in the listed order.
    pub fn select(&self, indices: &[usize]) -> Result<AudioBuffer> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let ch = self
                .channels
                .get(i)
                .ok_or_else(|| Error::Input(format!("channel {} out of range", i)))?;
            out.push(ch.clone());
        }
        AudioBuffer::new(self.sample_rate, out)
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            sample_rate: self.sample_rate,
            channels: self.channels.iter().map(|c| c.iter().map(|v| v * gain).collect()).collect(),
        }
    }

    /// Sample-wise sum of two buffers of identical layout.
    pub fn sum(&self, other: &AudioBuffer) -> Result<AudioBuffer> {
        if self.num_channels() != other.num_channels() || self.len() != other.len() {
            return Err(Error::Input("buffers differ in channel count or length".into()));
        }
        let channels = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        AudioBuffer::new(self.sample_rate, channels)
    }

    pub fn truncated(&self, len: usize) -> AudioBuffer {
        AudioBuffer {
            sample_rate: self.sample_rate,
            channels: self.channels.iter().map(|c| c[..len.min(c.len())].to_vec()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 64 ms frames with a 16 ms shift at 16 kHz.
    fn default() -> Self {
        StftConfig {
            frame_len: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples / self.hop + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Input(format!("frame length {} must be even and >= 2", self.frame_len)));
        }
        if self.hop == 0 || !self.frame_len.is_multiple_of(self.hop) {
            return Err(Error::Input(format!(
                "hop {} must divide the frame length {}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided complex STFT, stored as a `[channel, bin, frame]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    data: Tensor,
    config: StftConfig,
    sample_rate: u32,
    num_samples: usize,
}

impl Spectrogram {
    pub fn new(data: Tensor, config: StftConfig, sample_rate: u32, num_samples: usize) -> Result<Self> {
        config.validate()?;
        let s = data.shape();
        if s.len() != 3 || !data.is_complex() {
            return Err(Error::dim(format!("spectrogram must be complex [C, F, T], got {:?}", s)));
        }
        if s[1] != config.num_bins() || s[2] != config.num_frames(num_samples) {
            return Err(Error::dim(format!(
                "spectrogram shape {:?} inconsistent with frame length {} and {} samples",
                s, config.frame_len, num_samples
            )));
        }
        Ok(Spectrogram {
            data,
            config,
            sample_rate,
            num_samples,
        })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_frames(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn get(&self, c: usize, f: usize, t: usize) -> Complex64 {
        self.data.at((c * self.num_bins() + f) * self.num_frames() + t)
    }

    /// Same metadata, different data of identical layout rules.
    pub fn with_data(&self, data: Tensor) -> Result<Spectrogram> {
        Spectrogram::new(data, self.config, self.sample_rate, self.num_samples)
    }

    pub fn scaled(&self, alpha: f64) -> Spectrogram {
        Spectrogram {
            data: self.data.map_planes(|v| v * alpha),
            ..self.clone()
        }
    }

    /// Spectrogram restricted to the listed channels, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Result<Spectrogram> {
        let (f, t) = (self.num_bins(), self.num_frames());
        let mut re = Vec::with_capacity(indices.len() * f * t);
        let mut im = Vec::with_capacity(indices.len() * f * t);
        for &c in indices {
            if c >= self.num_channels() {
                return Err(Error::Input(format!("channel {} out of range", c)));
            }
            let range = c * f * t..(c + 1) * f * t;
            re.extend_from_slice(&self.data.re()[range.clone()]);
            im.extend_from_slice(&self.data.im().unwrap()[range]);
        }
        self.with_data(Tensor::complex(&[indices.len(), f, t], re, im)?)
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|i| x[pad - i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Centered STFT with a periodic Hann window and reflection padding of half a
/// frame on both ends; frame `t` is centered at sample `t·hop`.
pub fn stft(audio: &AudioBuffer, config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let (n, pad) = (config.frame_len, config.frame_len / 2);
    let len = audio.len();
    if len <= pad {
        return Err(Error::Input(format!(
            "signal of {} samples is too short for frame length {}",
            len, n
        )));
    }
    let (nf, nt, nc) = (config.num_bins(), config.num_frames(len), audio.num_channels());
    let window = hann_periodic(n);
    let fft = Fft::new(n);
    let mut re = vec![0.0; nc * nf * nt];
    let mut im = vec![0.0; nc * nf * nt];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..nc {
        let padded = reflect_pad(audio.channel(c), pad);
        for t in 0..nt {
            let start = t * config.hop;
            for k in 0..n {
                buf[k] = Complex64::new(padded[start + k] * window[k], 0.0);
            }
            fft.forward(&mut buf);
            for f in 0..nf {
                let idx = (c * nf + f) * nt + t;
                re[idx] = buf[f].re;
                im[idx] = buf[f].im;
            }
        }
    }
    Spectrogram::new(Tensor::complex(&[nc, nf, nt], re, im)?, config, audio.sample_rate(), len)
}

/// Overlap-add synthesis geometry shared by [`istft`] and [`IstftMap`].
#[derive(Clone, Debug)]
struct Synthesis {
    config: StftConfig,
    num_samples: usize,
    num_frames: usize,
    window: Vec<f64>,
    /// `1 / Σ_t w²` per output sample (0 where no frame contributes).
    inv_norm: Vec<f64>,
    fft: Fft,
}

impl Synthesis {
    fn new(config: StftConfig, num_samples: usize) -> Result<Self> {
        config.validate()?;
        let n = config.frame_len;
        let pad = n / 2;
        let num_frames = config.num_frames(num_samples);
        let window = hann_periodic(n);
        let mut norm = vec![0.0; (num_frames - 1) * config.hop + n];
        for t in 0..num_frames {
            for k in 0..n {
                norm[t * config.hop + k] += window[k] * window[k];
            }
        }
        // The squared window must not vanish anywhere inside a frame period.
        let peak = window.iter().map(|w| w * w).fold(0.0, f64::max);
        let steady = &norm[n..n.max(norm.len().saturating_sub(n))];
        if steady.iter().any(|&v| v < 1e-10 * peak) || (steady.is_empty() && config.hop == n) {
            return Err(Error::Contract(format!(
                "Hann window does not overlap-add at hop {} for frame length {}",
                config.hop, n
            )));
        }
        let inv_norm = (0..num_samples)
            .map(|m| {
                let v = norm[m + pad];
                if v > 1e-10 * peak {
                    1.0 / v
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Synthesis {
            config,
            num_samples,
            num_frames,
            window,
            inv_norm,
            fft: Fft::new(n),
        })
    }

    /// Synthesizes one channel from `[F, T]` planes.
    fn synthesize(&self, re: &[f64], im: &[f64]) -> Vec<f64> {
        let (n, hop, pad, nt) = (self.config.frame_len, self.config.hop, self.config.frame_len / 2, self.num_frames);
        let nf = n / 2 + 1;
        let mut out = vec![0.0; self.num_samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..nt {
            for f in 0..nf {
                let z = if f == 0 || f == n / 2 {
                    Complex64::new(re[f * nt + t], 0.0)
                } else {
                    Complex64::new(re[f * nt + t], im[f * nt + t])
                };
                buf[f] = z;
                if f != 0 && f != n / 2 {
                    buf[n - f] = z.conj();
                }
            }
            self.fft.inverse(&mut buf);
            for k in 0..n {
                let p = t * hop + k;
                if p < pad || p - pad >= self.num_samples {
                    continue;
                }
                let m = p - pad;
                out[m] += buf[k].re * self.window[k] * self.inv_norm[m];
            }
        }
        out
    }

    /// Transpose of [`Synthesis::synthesize`] on the `(Re, Im)` planes.
    fn adjoint(&self, grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, hop, pad, nt) = (self.config.frame_len, self.config.hop, self.config.frame_len / 2, self.num_frames);
        let nf = n / 2 + 1;
        let mut re = vec![0.0; nf * nt];
        let mut im = vec![0.0; nf * nt];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..nt {
            for k in 0..n {
                let p = t * hop + k;
                buf[k] = if p < pad || p - pad >= self.num_samples {
                    Complex64::new(0.0, 0.0)
                } else {
                    let m = p - pad;
                    Complex64::new(grad[m] * self.window[k] * self.inv_norm[m], 0.0)
                };
            }
            self.fft.forward(&mut buf);
            for f in 0..nf {
                let edge = f == 0 || f == n / 2;
                let scale = if edge { 1.0 } else { 2.0 } / n as f64;
                re[f * nt + t] = buf[f].re * scale;
                im[f * nt + t] = if edge { 0.0 } else { buf[f].im * scale };
            }
        }
        (re, im)
    }
}

/// Overlap-add synthesis with squared-window normalization. Output length
/// equals the analyzed signal length.
pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer> {
    let syn = Synthesis::new(spec.config, spec.num_samples)?;
    let (nf, nt) = (spec.num_bins(), spec.num_frames());
    let block = nf * nt;
    let (re, im) = (spec.data.re(), spec.data.im().unwrap());
    let channels = (0..spec.num_channels())
        .map(|c| syn.synthesize(&re[c * block..(c + 1) * block], &im[c * block..(c + 1) * block]))
        .collect();
    AudioBuffer::new(spec.sample_rate, channels)
}

/// Single-channel iSTFT as a recordable linear map: complex `[F, T]` to real
/// `[num_samples]`.
#[derive(Clone, Debug)]
pub struct IstftMap {
    syn: Synthesis,
}

impl IstftMap {
    pub fn new(config: StftConfig, num_samples: usize) -> Result<Self> {
        Ok(IstftMap {
            syn: Synthesis::new(config, num_samples)?,
        })
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        let want = [self.syn.config.num_bins(), self.syn.num_frames];
        if shape != want {
            return Err(Error::dim(format!("iSTFT expects {:?}, got {:?}", want, shape)));
        }
        Ok(())
    }
}

impl LinearMap for IstftMap {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input.shape())?;
        let im = input
            .im()
            .ok_or_else(|| Error::Dtype("iSTFT input must be complex".into()))?;
        let out = self.syn.synthesize(input.re(), im);
        Tensor::real(&[self.syn.num_samples], out)
    }

    fn adjoint(&self, grad: &Tensor) -> Result<Tensor> {
        let (re, im) = self.syn.adjoint(grad.re());
        Tensor::complex(&[self.syn.config.num_bins(), self.syn.num_frames], re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, channels: usize, len: usize) -> AudioBuffer {
        let ch = (0..channels).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        AudioBuffer::new(16000, ch).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn bin_centered_sine_concentrates_in_its_bin() {
        // Closed form: a periodic-Hann-windowed complex exponential at bin k
        // puts 1/1.5 of the windowed energy at k and 1/6 at each neighbour; a
        // real sine splits that between ±k, so bin 10 holds 2/3 of the
        // one-sided energy and the bins 9 and 11 the rest.
        let cfg = StftConfig::default();
        let f0 = 10.0 * 16000.0 / 1024.0;
        let x: Vec<f64> = (0..16000).map(|n| (2.0 * PI * f0 * n as f64 / 16000.0).sin()).collect();
        let spec = stft(&AudioBuffer::mono(16000, x).unwrap(), cfg).unwrap();
        let t = 5;
        let energy: Vec<f64> = (0..spec.num_bins()).map(|f| spec.get(0, f, t).norm_sqr()).collect();
        let total: f64 = energy.iter().sum();
        let near = energy[9] + energy[10] + energy[11];
        assert!((energy[10] / total - 2.0 / 3.0).abs() < 1e-6, "{}", energy[10] / total);
        assert!(near / total >= 0.95);
    }

    #[test]
    fn zeros_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = StftConfig { frame_len: 64, hop: 16 };
        let z = stft(&AudioBuffer::zeros(8000, 2, 500).unwrap(), cfg).unwrap();
        assert!(z.data().re().iter().chain(z.data().im().unwrap()).all(|&v| v == 0.0));
        let (a, b) = (noise(&mut rng, 2, 500), noise(&mut rng, 2, 500));
        let sab = stft(&a.sum(&b).unwrap(), cfg).unwrap();
        let (sa, sb) = (stft(&a, cfg).unwrap(), stft(&b, cfg).unwrap());
        for i in 0..sab.data().numel() {
            assert!((sab.data().at(i) - sa.data().at(i) - sb.data().at(i)).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (cfg, len) in [(StftConfig::default(), 16000), (StftConfig { frame_len: 8, hop: 2 }, 37)] {
            let x = noise(&mut rng, 2, len);
            let y = istft(&stft(&x, cfg).unwrap()).unwrap();
            assert_eq!(y.len(), len);
            for c in 0..2 {
                assert!(rel_err(y.channel(c), x.channel(c)) < 1e-6);
            }
        }
    }

    #[test]
    fn zero_and_scaled_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = StftConfig { frame_len: 64, hop: 16 };
        let spec = stft(&noise(&mut rng, 1, 300), cfg).unwrap();
        let zero = spec.with_data(Tensor::zeros(spec.data().shape(), crate::tensor::Dtype::Complex128)).unwrap();
        assert!(istft(&zero).unwrap().channel(0).iter().all(|&v| v == 0.0));
        let y = istft(&spec).unwrap();
        let y3 = istft(&spec.scaled(3.0)).unwrap();
        for (a, b) in y.channel(0).iter().zip(y3.channel(0)) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = StftConfig { frame_len: 128, hop: 32 };
        let x = noise(&mut rng, 1, 1000);
        let spec = stft(&x, cfg).unwrap();
        let padded = reflect_pad(x.channel(0), 64);
        let w = hann_periodic(128);
        for t in [0, 3, spec.num_frames() - 1] {
            let time: f64 = (0..128).map(|k| (padded[t * 32 + k] * w[k]).powi(2)).sum();
            let freq: f64 = (0..spec.num_bins())
                .map(|f| {
                    let c = if f == 0 || f == 64 { 1.0 } else { 2.0 };
                    c * spec.get(0, f, t).norm_sqr()
                })
                .sum::<f64>()
                / 128.0;
            assert!((time - freq).abs() / time < 1e-9);
        }
    }

    #[test]
    fn analysis_of_synthesis_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = StftConfig { frame_len: 64, hop: 16 };
        let spec = stft(&noise(&mut rng, 1, 400), cfg).unwrap();
        let again = stft(&istft(&spec).unwrap(), cfg).unwrap();
        assert!(again.data().max_abs_diff(spec.data()) < 1e-10);
    }

    #[test]
    fn rejects_bad_configs_and_short_input() {
        let x = AudioBuffer::mono(16000, vec![0.0; 100]).unwrap();
        assert!(matches!(stft(&x, StftConfig { frame_len: 7, hop: 1 }), Err(Error::Input(_))));
        assert!(matches!(stft(&x, StftConfig { frame_len: 8, hop: 3 }), Err(Error::Input(_))));
        assert!(matches!(stft(&x, StftConfig { frame_len: 256, hop: 64 }), Err(Error::Input(_))));
        let spec = stft(&x, StftConfig { frame_len: 16, hop: 16 }).unwrap();
        assert!(matches!(istft(&spec), Err(Error::Contract(_))));
    }

    #[test]
    fn istft_map_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = StftConfig { frame_len: 8, hop: 2 };
        let spec = stft(&noise(&mut rng, 1, 10), cfg).unwrap();
        let (nf, nt) = (spec.num_bins(), spec.num_frames());
        let input = spec.into_data().reshape(&[nf, nt]).unwrap();
        let weights: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let map = alloc::rc::Rc::new(IstftMap::new(cfg, 10).unwrap());
        let err = grad_check(
            |tape: &Tape, v| {
                let y = v[0].linear_map(map.clone())?;
                y.mul(&tape.constant(Tensor::real(&[10], weights.clone())?))
                    .map(|p| p.sum())
            },
            &[input],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {}", err);
    }
}
