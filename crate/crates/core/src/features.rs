//! Oracle masks, instantaneous SCMs and the two estimator input features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MASK_FLOOR: f64 = 1e-4;
const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    #[default]
    Wiener,
    PhaseSensitive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Iscm,
    #[default]
    Magipd,
}

/// Per-channel oracle masks, each a real `[C, F, T]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMasks {
    pub speech: Tensor,
    pub noise: Tensor,
}

/// Channel-averaged speech and noise masks, real `[F, T]`, floored.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    speech: Tensor,
    noise: Tensor,
}

impl MaskPair {
    /// Clips both masks into `[MASK_FLOOR, 1]`.
    pub fn new(speech: Tensor, noise: Tensor) -> Result<Self> {
        if speech.shape().len() != 2 || speech.shape() != noise.shape() {
            return Err(Error::dim(format!(
                "masks must share an [F, T] shape, got {:?} and {:?}",
                speech.shape(),
                noise.shape()
            )));
        }
        if speech.is_complex() || noise.is_complex() {
            return Err(Error::Dtype("masks must be real".into()));
        }
        if !speech.is_finite() || !noise.is_finite() {
            return Err(Error::Numeric("masks contain non-finite values".into()));
        }
        let clip = |t: &Tensor| t.map_planes(|v| v.clamp(MASK_FLOOR, 1.0));
        Ok(MaskPair {
            speech: clip(&speech),
            noise: clip(&noise),
        })
    }

    pub fn speech(&self) -> &Tensor {
        &self.speech
    }

    pub fn noise(&self) -> &Tensor {
        &self.noise
    }

    pub fn get(&self, source: Source) -> &Tensor {
        match source {
            Source::Speech => &self.speech,
            Source::Noise => &self.noise,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.speech.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.speech.shape()[1]
    }
}

/// Speech (x) or noise (n) component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Speech,
    Noise,
}

pub const SOURCES: [Source; 2] = [Source::Speech, Source::Noise];

fn check_same(a: &Spectrogram, b: &Spectrogram) -> Result<()> {
    if a.data().shape() != b.data().shape() {
        return Err(Error::dim(format!(
            "spectrogram shapes differ: {:?} vs {:?}",
            a.data().shape(),
            b.data().shape()
        )));
    }
    Ok(())
}

/// Oracle masks from the speech and noise images; the mixture is their sum.
pub fn oracle_mask(speech: &Spectrogram, noise: &Spectrogram, kind: MaskKind) -> Result<ChannelMasks> {
    check_same(speech, noise)?;
    let shape = speech.data().shape().to_vec();
    let n = speech.data().numel();
    let (mut ms, mut mn) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let x = speech.data().at(i);
        let v = noise.data().at(i);
        match kind {
            MaskKind::Wiener => {
                let (px, pn) = (x.norm_sqr(), v.norm_sqr());
                let den = px + pn + EPS;
                ms[i] = (px + EPS / 2.0) / den;
                mn[i] = (pn + EPS / 2.0) / den;
            }
            MaskKind::PhaseSensitive => {
                // |a| cos(∠a − ∠y) / |y| = Re(a ȳ) / |y|².
                let y = x + v;
                let den = y.norm_sqr() + EPS;
                ms[i] = ((x * y.conj()).re / den).clamp(0.0, 1.0);
                mn[i] = ((v * y.conj()).re / den).clamp(0.0, 1.0);
            }
        }
    }
    Ok(ChannelMasks {
        speech: Tensor::real(&shape, ms)?,
        noise: Tensor::real(&shape, mn)?,
    })
}

fn mean_channels(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 3 || s[0] == 0 {
        return Err(Error::Input(format!("expected non-empty [C, F, T] masks, got {:?}", s)));
    }
    let (c, ft) = (s[0], s[1] * s[2]);
    let mut out = vec![0.0; ft];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&t.re()[ch * ft..(ch + 1) * ft]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f64);
    Tensor::real(&[s[1], s[2]], out)
}

/// Channel mean of per-channel masks, floored into `[MASK_FLOOR, 1]`.
pub fn average_masks(masks: &ChannelMasks) -> Result<MaskPair> {
    MaskPair::new(mean_channels(&masks.speech)?, mean_channels(&masks.noise)?)
}

/// Oracle masks averaged over channels, the usual input to the beamformer.
pub fn oracle_mask_pair(speech: &Spectrogram, noise: &Spectrogram, kind: MaskKind) -> Result<MaskPair> {
    average_masks(&oracle_mask(speech, noise, kind)?)
}

/// Instantaneous speech and noise SCMs `m · y yᴴ`, complex `[F, T, C, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IscmSequence {
    pub speech: Tensor,
    pub noise: Tensor,
}

impl IscmSequence {
    pub fn get(&self, source: Source) -> &Tensor {
        match source {
            Source::Speech => &self.speech,
            Source::Noise => &self.noise,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.speech.shape();
        (s[0], s[1], s[2])
    }
}

fn check_masks(spec: &Spectrogram, masks: &MaskPair) -> Result<()> {
    if masks.num_bins() != spec.num_bins() || masks.num_frames() != spec.num_frames() {
        return Err(Error::dim(format!(
            "masks are [{}, {}] but the spectrogram has {} bins and {} frames",
            masks.num_bins(),
            masks.num_frames(),
            spec.num_bins(),
            spec.num_frames()
        )));
    }
    Ok(())
}

/// Outer products `y yᴴ` of every (f, t), complex `[F, T, C, C]`.
pub fn outer_products(spec: &Spectrogram) -> Result<Tensor> {
    let (c, f, t) = (spec.num_channels(), spec.num_bins(), spec.num_frames());
    let mut re = vec![0.0; f * t * c * c];
    let mut im = vec![0.0; f * t * c * c];
    let mut y = vec![Complex64::new(0.0, 0.0); c];
    for fi in 0..f {
        for ti in 0..t {
            for (ch, v) in y.iter_mut().enumerate() {
                *v = spec.get(ch, fi, ti);
            }
            let base = (fi * t + ti) * c * c;
            for i in 0..c {
                for j in 0..c {
                    let z = y[i] * y[j].conj();
                    re[base + i * c + j] = z.re;
                    im[base + i * c + j] = z.im;
                }
            }
        }
    }
    Tensor::complex(&[f, t, c, c], re, im)
}

pub fn compute_iscm(spec: &Spectrogram, masks: &MaskPair) -> Result<IscmSequence> {
    check_masks(spec, masks)?;
    let yy = outer_products(spec)?;
    let cc = spec.num_channels() * spec.num_channels();
    let weight = |m: &Tensor| {
        let mut out = yy.clone();
        for (k, v) in out.re_mut().iter_mut().enumerate() {
            *v *= m.re()[k / cc];
        }
        for (k, v) in out.im_mut().unwrap().iter_mut().enumerate() {
            *v *= m.re()[k / cc];
        }
        out
    };
    Ok(IscmSequence {
        speech: weight(masks.speech()),
        noise: weight(masks.noise()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    /// Flat `[T, 4FC²]`.
    IscmCat,
    /// Flat `[T, 6FC]`.
    MagipdCat,
    /// Per-channel `[C, T, 6F]`.
    MagipdStreams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    layout: FeatureLayout,
    values: Tensor,
}

impl FeatureTensor {
    pub fn new(layout: FeatureLayout, values: Tensor) -> Result<Self> {
        let ok = match layout {
            FeatureLayout::MagipdStreams => values.ndim() == 3 && values.shape()[2].is_multiple_of(6),
            FeatureLayout::IscmCat => values.ndim() == 2 && values.shape()[1].is_multiple_of(4),
            FeatureLayout::MagipdCat => values.ndim() == 2 && values.shape()[1].is_multiple_of(6),
        };
        if !ok || values.is_complex() {
            return Err(Error::dim(format!(
                "shape {:?} does not fit the {:?} layout",
                values.shape(),
                layout
            )));
        }
        Ok(FeatureTensor { layout, values })
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn num_frames(&self) -> usize {
        match self.layout {
            FeatureLayout::MagipdStreams => self.values.shape()[1],
            _ => self.values.shape()[0],
        }
    }

    /// Feature dimension per frame (per stream for the streams layout).
    pub fn dim(&self) -> usize {
        *self.values.shape().last().unwrap()
    }
}

/// Real and imaginary parts of the column-major vectorized ISCMs, per
/// (ν, f), concatenated over frequency then over ν: `[T, 4FC²]`.
pub fn iscm_features(iscm: &IscmSequence) -> Result<FeatureTensor> {
    let (f, t, c) = iscm.dims();
    let cc = c * c;
    let dim = 4 * f * cc;
    let mut out = vec![0.0; t * dim];
    for (si, src) in SOURCES.iter().enumerate() {
        let psi = iscm.get(*src);
        let (re, im) = (psi.re(), psi.im().unwrap());
        for fi in 0..f {
            for ti in 0..t {
                let base = (fi * t + ti) * cc;
                let o = ti * dim + (si * f + fi) * 2 * cc;
                for j in 0..c {
                    for i in 0..c {
                        out[o + j * c + i] = re[base + i * c + j];
                        out[o + cc + j * c + i] = im[base + i * c + j];
                    }
                }
            }
        }
    }
    FeatureTensor::new(FeatureLayout::IscmCat, Tensor::real(&[t, dim], out)?)
}

/// Per-channel masked power and phase difference to the channel mean:
/// `[C, T, 6F]` with per-bin triplets `(|ν̂|², cos δ̂, sin δ̂)`, speech bins
/// first, then noise bins.
pub fn mag_ipd_features(spec: &Spectrogram, masks: &MaskPair) -> Result<FeatureTensor> {
    check_masks(spec, masks)?;
    let (c, f, t) = (spec.num_channels(), spec.num_bins(), spec.num_frames());
    if c == 0 {
        return Err(Error::Input("mag-IPD features need at least one channel".into()));
    }
    let dim = 6 * f;
    let mut out = vec![0.0; c * t * dim];
    let mut nu = vec![Complex64::new(0.0, 0.0); c];
    for (si, src) in SOURCES.iter().enumerate() {
        let m = masks.get(*src).re();
        for fi in 0..f {
            for ti in 0..t {
                let w = m[fi * t + ti];
                for (ch, v) in nu.iter_mut().enumerate() {
                    *v = spec.get(ch, fi, ti) * w;
                }
                let sigma = nu.iter().sum::<Complex64>() / c as f64;
                for ch in 0..c {
                    let (cos_d, sin_d) = if sigma.norm() < EPS || nu[ch].norm() < EPS {
                        (1.0, 0.0)
                    } else {
                        // Unit phasor of ν̂ σ̂*; wrapping of the angle difference is irrelevant.
                        let p = nu[ch] * sigma.conj();
                        let r = p.norm();
                        (p.re / r, p.im / r)
                    };
                    let o = (ch * t + ti) * dim + (si * f + fi) * 3;
                    out[o] = nu[ch].norm_sqr();
                    out[o + 1] = cos_d;
                    out[o + 2] = sin_d;
                }
            }
        }
    }
    FeatureTensor::new(FeatureLayout::MagipdStreams, Tensor::real(&[c, t, dim], out)?)
}

/// Channel-major flattening of mag-IPD streams: `[C, T, 6F]` to `[T, 6FC]`.
pub fn concat_streams(streams: &FeatureTensor) -> Result<FeatureTensor> {
    if streams.layout != FeatureLayout::MagipdStreams {
        return Err(Error::Contract("concat_streams expects the streams layout".into()));
    }
    let s = streams.values.shape();
    let (c, t, d) = (s[0], s[1], s[2]);
    let src = streams.values.re();
    let mut out = vec![0.0; t * c * d];
    for ch in 0..c {
        for ti in 0..t {
            out[ti * c * d + ch * d..ti * c * d + (ch + 1) * d]
                .copy_from_slice(&src[(ch * t + ti) * d..(ch * t + ti + 1) * d]);
        }
    }
    FeatureTensor::new(FeatureLayout::MagipdCat, Tensor::real(&[t, c * d], out)?)
}

/// Inverse of [`concat_streams`] for a known channel count.
pub fn split_streams(flat: &FeatureTensor, channels: usize) -> Result<FeatureTensor> {
    if flat.layout != FeatureLayout::MagipdCat {
        return Err(Error::Contract("split_streams expects the flat mag-IPD layout".into()));
    }
    let s = flat.values.shape();
    if channels == 0 || !s[1].is_multiple_of(channels) {
        return Err(Error::dim(format!("cannot split {} features into {} channels", s[1], channels)));
    }
    let (t, d) = (s[0], s[1] / channels);
    let src = flat.values.re();
    let mut out = vec![0.0; channels * t * d];
    for ch in 0..channels {
        for ti in 0..t {
            out[(ch * t + ti) * d..(ch * t + ti + 1) * d]
                .copy_from_slice(&src[ti * channels * d + ch * d..ti * channels * d + (ch + 1) * d]);
        }
    }
    FeatureTensor::new(FeatureLayout::MagipdStreams, Tensor::real(&[channels, t, d], out)?)
}

/// Features in the layout the estimator variant consumes.
pub fn extract_features(
    spec: &Spectrogram,
    masks: &MaskPair,
    kind: FeatureKind,
    streams: bool,
) -> Result<FeatureTensor> {
    match (kind, streams) {
        (FeatureKind::Iscm, false) => iscm_features(&compute_iscm(spec, masks)?),
        (FeatureKind::Iscm, true) => Err(Error::Config(
            "ISCM features have no per-channel stream layout".into(),
        )),
        (FeatureKind::Magipd, true) => mag_ipd_features(spec, masks),
        (FeatureKind::Magipd, false) => concat_streams(&mag_ipd_features(spec, masks)?),
    }
}

/// Reorders the leading (channel) axis of a tensor.
pub fn permute_channels(t: &Tensor, order: &[usize]) -> Result<Tensor> {
    let s = t.shape();
    if s.is_empty() || order.len() != s[0] {
        return Err(Error::dim("permutation length does not match the channel axis"));
    }
    let block = t.numel() / s[0].max(1);
    let gather = |plane: &[f64]| -> Vec<f64> {
        order.iter().flat_map(|&c| plane[c * block..(c + 1) * block].iter().copied()).collect()
    };
    match t.im() {
        Some(im) => Tensor::complex(s, gather(t.re()), gather(im)),
        None => Tensor::real(s, gather(t.re())),
    }
}
