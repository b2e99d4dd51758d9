//! SI-SNR, SDR with a time-invariant filter allowance, evaluation
//! conditions and report aggregation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scene::ChannelConfig;

/// Both metrics saturate at ±60 dB.
pub const METRIC_CAP_DB: f64 = 60.0;
/// Default FIR allowance of [`sdr_tif`]: 32 ms at 16 kHz.
pub const DEFAULT_FILTER_LEN: usize = 512;
/// Relative diagonal loading of the normal equations.
pub const SDR_LOADING: f64 = 1e-10;

fn ratio_db(signal: f64, error: f64) -> f64 {
    if signal <= 0.0 {
        return -METRIC_CAP_DB;
    }
    if error <= 0.0 {
        return METRIC_CAP_DB;
    }
    (10.0 * (signal / error).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::dim(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if est.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite samples".into()));
    }
    Ok(())
}

/// Scale-invariant SNR of `est` against `reference`, dB.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference)?;
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::Input("reference signal is silent".into()));
    }
    let alpha = est.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let err: f64 = est.iter().zip(reference).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    Ok(ratio_db(target, err))
}

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    x
}

/// `y[n] = Σ_k g[k] x[n - k]` for `n < x.len()`.
fn causal_filter(g: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (k, gk) in g.iter().enumerate() {
        for n in k..x.len() {
            y[n] += gk * x[n - k];
        }
    }
    y
}

/// SDR after the least-squares `filter_len`-tap FIR fit of `reference` to
/// `est`, dB. The fit absorbs gain, delay and short filtering.
pub fn sdr_tif(est: &[f64], reference: &[f64], filter_len: usize) -> Result<f64> {
    check_pair(est, reference)?;
    let (n, l) = (reference.len(), filter_len);
    if l == 0 || n < l {
        return Err(Error::Input(format!("signals of {} samples are shorter than the {}-tap filter", n, l)));
    }
    // R[i][j] = Σ_{t ≥ max(i, j)} ref[t - i] ref[t - j] for the truncated
    // convolution; each diagonal follows from its first entry.
    let mut r = vec![0.0; l * l];
    for d in 0..l {
        let mut v: f64 = (0..n - d).map(|m| reference[m] * reference[m + d]).sum();
        for i in 0..l - d {
            if i > 0 {
                v -= reference[n - i] * reference[n - i - d];
            }
            r[i * l + i + d] = v;
            r[(i + d) * l + i] = v;
        }
    }
    let r00 = r[0];
    if !(r00 > 0.0) {
        return Err(Error::Numeric("degenerate reference autocorrelation".into()));
    }
    for i in 0..l {
        r[i * l + i] += SDR_LOADING * r00;
    }
    let rhs: Vec<f64> = (0..l).map(|k| (k..n).map(|t| est[t] * reference[t - k]).sum()).collect();
    let chol = cholesky(&r, l).ok_or_else(|| Error::Numeric("normal equations are not positive definite".into()))?;
    let g = cholesky_solve(&chol, l, &rhs);
    let proj = causal_filter(&g, reference);
    let signal: f64 = proj.iter().map(|v| v * v).sum();
    let err: f64 = est.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ratio_db(signal, err))
}

/// Channel transform applied to an utterance before enhancement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Identity,
    /// A random permutation of all channels.
    Permute,
    /// The first `k` channels in stored order.
    First(usize),
    /// A random `k`-subset in random order.
    RandomSubset(usize),
}

impl Condition {
    /// The channel configuration for an utterance with `channels` mics.
    pub fn channels<R: Rng + ?Sized>(&self, channels: usize, rng: &mut R) -> Result<ChannelConfig> {
        let k = match *self {
            Condition::Identity | Condition::Permute => channels,
            Condition::First(k) | Condition::RandomSubset(k) => k,
        };
        if k == 0 || k > channels {
            return Err(Error::Input(format!("condition `{}` needs {} of {} channels", self, k, channels)));
        }
        let mut all: Vec<usize> = (0..channels).collect();
        match self {
            Condition::Identity | Condition::First(_) => all.truncate(k),
            Condition::Permute => all.shuffle(rng),
            Condition::RandomSubset(_) => {
                let (chosen, _) = all.partial_shuffle(rng, k);
                all = chosen.to_vec();
            }
        }
        ChannelConfig::new(all, channels)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Identity => write!(f, "identity"),
            Condition::Permute => write!(f, "permute"),
            Condition::First(k) => write!(f, "first:{}", k),
            Condition::RandomSubset(k) => write!(f, "random_subset:{}", k),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown condition `{}`", s));
        match s.split_once(':') {
            None if s == "identity" => Ok(Condition::Identity),
            None if s == "permute" => Ok(Condition::Permute),
            Some((name, k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                match name {
                    "first" => Ok(Condition::First(k)),
                    "random_subset" => Ok(Condition::RandomSubset(k)),
                    _ => Err(bad()),
                }
            }
            None => Err(bad()),
        }
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluated utterance under one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub utterance_id: String,
    /// Condition tag; mixture baselines use `mixture`.
    pub condition: String,
    pub model: String,
    pub channels: usize,
    pub si_snr_db: f64,
    pub sdr_db: f64,
    pub fallback_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: String,
    pub model: String,
    pub count: usize,
    pub si_snr_mean: f64,
    pub si_snr_std: f64,
    pub sdr_mean: f64,
    pub sdr_std: f64,
    pub fallback_rate_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-utterance rows plus per-(model, condition) means and population
/// standard deviations, in order of first appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
}

impl MetricReport {
    pub fn new(rows: Vec<MetricRow>) -> Self {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &rows {
            let k = (r.model.clone(), r.condition.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let aggregates = keys
            .into_iter()
            .map(|(model, condition)| {
                let sel: Vec<&MetricRow> =
                    rows.iter().filter(|r| r.model == model && r.condition == condition).collect();
                let col = |f: fn(&MetricRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let (si_snr_mean, si_snr_std) = mean_std(&col(|r| r.si_snr_db));
                let (sdr_mean, sdr_std) = mean_std(&col(|r| r.sdr_db));
                let (fallback_rate_mean, _) = mean_std(&col(|r| r.fallback_rate));
                Aggregate {
                    condition,
                    model,
                    count: sel.len(),
                    si_snr_mean,
                    si_snr_std,
                    sdr_mean,
                    sdr_std,
                    fallback_rate_mean,
                }
            })
            .collect();
        MetricReport { rows, aggregates }
    }

    pub fn aggregate(&self, model: &str, condition: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.model == model && a.condition == condition)
    }
}

/// Tag of the unprocessed-mixture baseline rows.
pub const MIXTURE_CONDITION: &str = "mixture";

impl MetricRow {
    pub fn evaluate(
        utterance_id: &str,
        condition: &str,
        model: &str,
        channels: usize,
        est: &[f64],
        reference: &[f64],
        filter_len: usize,
        fallback_rate: f64,
    ) -> Result<Self> {
        Ok(MetricRow {
            utterance_id: utterance_id.to_string(),
            condition: condition.to_string(),
            model: model.to_string(),
            channels,
            si_snr_db: si_snr(est, reference)?,
            sdr_db: sdr_tif(est, reference, filter_len)?,
            fallback_rate,
        })
    }
}
