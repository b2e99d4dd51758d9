use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Speech-like dry signal: syllables of gliding harmonic complexes shaped by
/// two random formant resonances, Hann amplitude envelopes, occasional
/// fricative-like noise onsets and pauses. Normalized to unit RMS.
pub fn speech_like<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let fs = sample_rate as f64;
    let nyq_band = (0.45 * fs).min(4000.0);
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.0..0.1) * fs) as usize;
    let mut phase = 0.0;
    while pos < len {
        let syl = ((rng.gen_range(0.12..0.32)) * fs) as usize;
        let f0a: f64 = rng.gen_range(90.0..220.0);
        let f0b = f0a * rng.gen_range(0.8..1.25);
        let f1: f64 = rng.gen_range(300.0..900.0);
        let f2: f64 = rng.gen_range(900.0..2500.0);
        let level = rng.gen_range(0.4..1.0);
        let end = (pos + syl).min(len);
        for n in pos..end {
            let u = (n - pos) as f64 / syl as f64;
            let f0 = f0a + (f0b - f0a) * u;
            phase += 2.0 * PI * f0 / fs;
            let env = level * (PI * u).sin().powi(2);
            let mut s = 0.0;
            let mut k = 1;
            while k as f64 * f0 < nyq_band {
                let f = k as f64 * f0;
                let formant = (-((f - f1) / 150.0).powi(2)).exp() + 0.6 * (-((f - f2) / 250.0).powi(2)).exp();
                s += (0.15 / k as f64 + formant) * (k as f64 * phase).sin();
                k += 1;
            }
            out[n] += env * s;
        }
        if rng.gen_bool(0.5) {
            let burst = ((rng.gen_range(0.02..0.05)) * fs) as usize;
            let mut prev = 0.0;
            for n in pos..(pos + burst).min(len) {
                let w: f64 = StandardNormal.sample(rng);
                let u = (n - pos) as f64 / burst as f64;
                out[n] += 0.3 * level * (PI * u).sin() * (w - prev);
                prev = w;
            }
        }
        pos = end + (rng.gen_range(0.03..0.25) * fs) as usize;
    }
    normalize(out)
}

/// Stationary noise with a random mix of white, low-passed and band-limited
/// components. Normalized to unit RMS.
pub fn noise_like<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let pole: f64 = rng.gen_range(0.8..0.98);
    let white_gain = rng.gen_range(0.1..0.6);
    let mut lp = 0.0;
    let out = (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            lp = pole * lp + (1.0 - pole) * w * 4.0;
            lp + white_gain * w
        })
        .collect();
    normalize(out)
}

/// White Gaussian noise with unit variance.
pub fn white_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
