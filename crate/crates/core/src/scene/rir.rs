use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use super::geometry::{distance, Point};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Length of the windowed-sinc kernel used for fractional delays.
pub const SINC_TAPS: usize = 81;
const HALF: usize = SINC_TAPS / 2;
const MIN_RIR_LEN: usize = 256;
/// Cut-off of the Allen-Berkley high-pass that removes the DC build-up of
/// the all-positive image pulses.
pub const HIGHPASS_HZ: f64 = 100.0;
/// Fractional-delay resolution of the kernel table (linear interpolation in between).
const FRACTIONS: usize = 512;

fn allen_berkley_highpass(h: &mut [f64], sample_rate: u32) {
    let w = 2.0 * PI * HIGHPASS_HZ / sample_rate as f64;
    let r1 = (-w).exp();
    let (b1, b2, a1) = (2.0 * r1 * w.cos(), -r1 * r1, -(1.0 + r1));
    let mut y = [0.0; 3];
    for v in h.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

pub(crate) fn check_inside(room: &Point, p: &Point, what: &str) -> Result<()> {
    for k in 0..3 {
        if !(room[k] > 0.0) || !(p[k] > 0.0 && p[k] < room[k]) {
            return Err(Error::Input(format!(
                "{} {:?} is not strictly inside the room {:?}",
                what, p, room
            )));
        }
    }
    Ok(())
}

/// Uniform wall reflection coefficient from Sabine's formula; zero when the
/// requested reverberation time is unreachable or zero.
pub fn sabine_beta(room: &Point, t60: f64) -> f64 {
    if t60 <= 0.0 {
        return 0.0;
    }
    let volume = room[0] * room[1] * room[2];
    let surface = 2.0 * (room[0] * room[1] + room[0] * room[2] + room[1] * room[2]);
    let alpha = (0.161 * volume / (surface * t60)).min(1.0);
    (1.0 - alpha).sqrt()
}

/// Output length for a given direct-path delay: the reverberation tail plus
/// the direct delay plus half the interpolation kernel.
pub fn rir_len(t60: f64, sample_rate: u32, direct_delay: f64) -> usize {
    let tail = (1.2 * t60 * sample_rate as f64).ceil() as usize;
    (tail + direct_delay.ceil() as usize + HALF + 1).max(MIN_RIR_LEN)
}

/// Table of Hann-windowed sinc kernels, one row per fractional delay in
/// `[0, 1]` (inclusive, so interpolation never wraps).
struct SincTable {
    rows: Vec<[f64; SINC_TAPS]>,
}

impl SincTable {
    fn new() -> Self {
        let rows = (0..=FRACTIONS)
            .map(|j| {
                let frac = j as f64 / FRACTIONS as f64;
                let mut row = [0.0; SINC_TAPS];
                for (i, v) in row.iter_mut().enumerate() {
                    let x = i as f64 - HALF as f64 - frac;
                    let window = 0.5 * (1.0 + (2.0 * PI * x / SINC_TAPS as f64).cos());
                    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                    *v = window * sinc;
                }
                row
            })
            .collect();
        SincTable { rows }
    }

    /// Adds `gain · kernel(delay)` into `out`, clipping at both ends.
    fn splat(&self, out: &mut [f64], delay: f64, gain: f64) {
        let base = delay.floor();
        let pos = (delay - base) * FRACTIONS as f64;
        let j = (pos as usize).min(FRACTIONS - 1);
        let t = pos - j as f64;
        let (a, b) = (&self.rows[j], &self.rows[j + 1]);
        let start = base as isize - HALF as isize;
        let lo = (-start).max(0) as usize;
        let hi = ((out.len() as isize - start).min(SINC_TAPS as isize)).max(0) as usize;
        for i in lo..hi {
            out[(start + i as isize) as usize] += gain * (a[i] + t * (b[i] - a[i]));
        }
    }
}

/// Precomputed state for repeated RIR synthesis in one room.
pub struct RirSynth {
    room: Point,
    t60: f64,
    sample_rate: u32,
    max_order: Option<usize>,
    beta_pow: Vec<f64>,
    table: SincTable,
}

impl RirSynth {
    pub fn new(room: Point, t60: f64, sample_rate: u32, max_order: Option<usize>) -> Result<Self> {
        if !(t60 >= 0.0) || !t60.is_finite() {
            return Err(Error::Input(format!("T60 must be finite and non-negative, got {}", t60)));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if room.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("invalid room dimensions {:?}", room)));
        }
        let beta = sabine_beta(&room, t60);
        // Largest reflection count needed: paths up to the tail length cross
        // at most that many walls along each axis.
        let reach = 1.2 * t60 * SPEED_OF_SOUND + 2.0 * (room[0] + room[1] + room[2]);
        let max_reflections = (0..3).map(|k| (reach / room[k]).ceil() as usize + 2).sum::<usize>();
        let beta_pow = (0..=max_reflections).map(|k| beta.powi(k as i32)).collect();
        Ok(RirSynth {
            room,
            t60,
            sample_rate,
            max_order: if t60 == 0.0 { Some(max_order.unwrap_or(0)) } else { max_order },
            beta_pow,
            table: SincTable::new(),
        })
    }

    /// Image-source impulse response from `src` to `mic`.
    pub fn rir(&self, src: &Point, mic: &Point) -> Result<Vec<f64>> {
        check_inside(&self.room, src, "source")?;
        check_inside(&self.room, mic, "microphone")?;
        let fs = self.sample_rate as f64;
        let direct = distance(src, mic) / SPEED_OF_SOUND * fs;
        let len = rir_len(self.t60, self.sample_rate, direct);
        let mut out = vec![0.0; len];
        let max_dist = (len + HALF) as f64 / fs * SPEED_OF_SOUND;
        let order_cap = self.max_order.unwrap_or(usize::MAX);

        // Per-axis image offsets: image coordinate (1-2q)·s + 2mL and its
        // reflection count |m - q| + |m|.
        let axis_images = |k: usize| -> Vec<(f64, usize)> {
            let l = self.room[k];
            let span = (max_dist / (2.0 * l)).ceil() as i64 + 1;
            let mut v = Vec::new();
            for m in -span..=span {
                for q in 0..2i64 {
                    let coord = (1 - 2 * q) as f64 * src[k] + 2.0 * m as f64 * l;
                    let d = coord - mic[k];
                    let refl = ((m - q).abs() + m.abs()) as usize;
                    if d.abs() <= max_dist && refl <= order_cap {
                        v.push((d * d, refl));
                    }
                }
            }
            v
        };
        let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));
        let max_d2 = max_dist * max_dist;
        for &(dx2, rx) in &xs {
            for &(dy2, ry) in &ys {
                let dxy2 = dx2 + dy2;
                if dxy2 > max_d2 || rx + ry > order_cap {
                    continue;
                }
                for &(dz2, rz) in &zs {
                    let d2 = dxy2 + dz2;
                    let order = rx + ry + rz;
                    if d2 > max_d2 || order > order_cap {
                        continue;
                    }
                    let gain = match self.beta_pow.get(order) {
                        Some(&g) if g != 0.0 || order == 0 => g,
                        _ => continue,
                    };
                    let d = d2.sqrt();
                    self.table
                        .splat(&mut out, d / SPEED_OF_SOUND * fs, gain / (4.0 * PI * d));
                }
            }
        }
        if order_cap > 0 {
            allen_berkley_highpass(&mut out, self.sample_rate);
        }
        Ok(out)
    }
}

/// Shoebox room impulse response by the image-source method.
///
/// `max_order` limits the total reflection count; `None` keeps every image
/// whose arrival falls inside the response length. A zero T60 yields the
/// anechoic direct path. Responses with reflections are high-passed at
/// [`HIGHPASS_HZ`].
pub fn simulate_rir(
    room: Point,
    src: Point,
    mic: Point,
    t60: f64,
    sample_rate: u32,
    max_order: Option<usize>,
) -> Result<Vec<f64>> {
    RirSynth::new(room, t60, sample_rate, max_order)?.rir(&src, &mic)
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at the start).
pub fn energy_decay_curve(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|&e| 10.0 * (e / total).log10()).collect()
}

/// Reverberation time from the decay between -5 and -25 dB, extrapolated
/// to 60 dB by a least-squares line fit.
pub fn estimate_t60(h: &[f64], sample_rate: u32) -> Result<f64> {
    let edc = energy_decay_curve(h);
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &e)| (-25.0..=-5.0).contains(&e))
        .map(|(i, &e)| (i as f64 / sample_rate as f64, e))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Numeric("energy decay does not span -5..-25 dB".into()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Numeric("energy decay curve is not decreasing".into()));
    }
    Ok(-60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak(h: &[f64]) -> (usize, f64) {
        h.iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &v)| if v.abs() > acc.1.abs() { (i, v) } else { acc })
    }

    #[test]
    fn anechoic_pulse_matches_free_field() {
        let room = [6.0, 5.0, 3.0];
        let src = [1.0, 2.0, 1.5];
        let mic = [2.7, 2.0, 1.5];
        let h = simulate_rir(room, src, mic, 0.0, 16000, Some(0)).unwrap();
        let delay = 1.7 / SPEED_OF_SOUND * 16000.0;
        let (i, a) = peak(&h);
        assert!((i as f64 - delay).abs() <= 1.0, "peak at {} vs {}", i, delay);
        // Sub-sample centroid of the main lobe recovers the fractional delay.
        let w: f64 = (i - 1..=i + 1).map(|k| h[k]).sum();
        let centroid: f64 = (i - 1..=i + 1).map(|k| k as f64 * h[k]).sum::<f64>() / w;
        assert!((centroid - delay).abs() < 0.35, "{} vs {}", centroid, delay);
        // Band-limited pulse: the sum of taps is the path gain, and so is the
        // sinc-interpolated value at the exact arrival time.
        let expect = 1.0 / (4.0 * PI * 1.7);
        let total: f64 = h.iter().sum();
        assert!((total - expect).abs() / expect < 0.05);
        let at_delay: f64 = h
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let x = PI * (n as f64 - delay);
                v * x.sin() / x
            })
            .sum();
        assert!((at_delay - expect).abs() / expect < 0.05, "{} vs {}", at_delay, expect);
        assert!(a > 0.0 && a <= expect * 1.0001);
        assert_eq!(h.len(), MIN_RIR_LEN);
    }

    #[test]
    fn direct_peak_moves_later_with_distance() {
        let room = [5.0, 4.0, 3.0];
        let src = [1.0, 1.0, 1.2];
        let near = simulate_rir(room, src, [2.0, 1.5, 1.2], 0.0, 16000, None).unwrap();
        let far = simulate_rir(room, src, [4.0, 3.0, 1.2], 0.0, 16000, None).unwrap();
        assert!(peak(&near).0 < peak(&far).0);
    }

    #[test]
    fn schroeder_t60_is_close_to_target() {
        let room = [3.0, 3.0, 2.5];
        let h = simulate_rir(room, [0.8, 1.1, 1.4], [2.1, 1.9, 1.2], 0.3, 16000, None).unwrap();
        assert_eq!(h.len(), rir_len(0.3, 16000, distance(&[0.8, 1.1, 1.4], &[2.1, 1.9, 1.2]) / 343.0 * 16000.0));
        let t = estimate_t60(&h, 16000).unwrap();
        assert!((t - 0.3).abs() <= 0.06, "estimated T60 {}", t);
    }

    #[test]
    fn order_limit_and_errors() {
        let room = [4.0, 4.0, 3.0];
        let (s, m) = ([1.0, 1.0, 1.0], [2.0, 3.0, 1.5]);
        let h0 = simulate_rir(room, s, m, 0.3, 16000, Some(0)).unwrap();
        let h1 = simulate_rir(room, s, m, 0.3, 16000, Some(1)).unwrap();
        let e = |h: &[f64]| h.iter().map(|v| v * v).sum::<f64>();
        assert!(e(&h1) > e(&h0));
        assert!(simulate_rir(room, [4.5, 1.0, 1.0], m, 0.3, 16000, None).is_err());
        assert!(simulate_rir(room, s, [1.0, 1.0, 0.0], 0.3, 16000, None).is_err());
        assert!(simulate_rir(room, s, m, -0.1, 16000, None).is_err());
    }

    #[test]
    fn sinc_table_reproduces_integer_delay() {
        let t = SincTable::new();
        let mut out = vec![0.0; 200];
        t.splat(&mut out, 100.0, 1.0);
        assert_eq!(out[100], 1.0);
        assert!(out.iter().enumerate().all(|(i, &v)| i == 100 || v.abs() < 1e-15));
    }
}
