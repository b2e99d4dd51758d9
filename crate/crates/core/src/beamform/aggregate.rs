use alloc::format;
use alloc::vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::estimator::AttentionWeights;
use crate::features::{IscmSequence, Source};
use crate::tensor::Tensor;

/// Time-varying speech and noise SCMs, complex `[F, T, C, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmSequence {
    pub speech: Tensor,
    pub noise: Tensor,
}

impl ScmSequence {
    pub fn new(speech: Tensor, noise: Tensor) -> Result<Self> {
        let s = speech.shape();
        if s.len() != 4 || s[2] != s[3] || !speech.is_complex() || !noise.is_complex() {
            return Err(Error::dim(format!("SCMs must be complex [F, T, C, C], got {:?}", s)));
        }
        if noise.shape() != s {
            return Err(Error::dim("speech and noise SCMs differ in shape"));
        }
        Ok(ScmSequence { speech, noise })
    }

    pub fn get(&self, source: Source) -> &Tensor {
        match source {
            Source::Speech => &self.speech,
            Source::Noise => &self.noise,
        }
    }

    /// `(F, T, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.speech.shape();
        (s[0], s[1], s[2])
    }
}

fn check_iscm(iscms: &IscmSequence) -> Result<(usize, usize, usize)> {
    let s = iscms.speech.shape();
    if s.len() != 4 || s[2] != s[3] || !iscms.speech.is_complex() || iscms.noise.shape() != s {
        return Err(Error::dim(format!("ISCMs must be complex [F, T, C, C], got {:?}", s)));
    }
    Ok(iscms.dims())
}

/// `Φ[f, t] = Σ_τ a[t, τ] Ψ[f, τ]` with the same rows for every bin.
fn mix(psi: &Tensor, rows: &Tensor, f: usize, t: usize, cc: usize) -> Result<Tensor> {
    let (re, im) = (psi.re(), psi.im().unwrap());
    let a = rows.re();
    let mut ore = vec![0.0; f * t * cc];
    let mut oim = vec![0.0; f * t * cc];
    for fi in 0..f {
        let base = fi * t * cc;
        for ti in 0..t {
            let dst = base + ti * cc;
            for tau in 0..t {
                let w = a[ti * t + tau];
                if w == 0.0 {
                    continue;
                }
                let src = base + tau * cc;
                for k in 0..cc {
                    ore[dst + k] += w * re[src + k];
                    oim[dst + k] += w * im[src + k];
                }
            }
        }
    }
    Tensor::complex(psi.shape(), ore, oim)
}

pub fn aggregate_scm(iscms: &IscmSequence, attn: &AttentionWeights) -> Result<ScmSequence> {
    let (f, t, c) = check_iscm(iscms)?;
    if attn.num_frames() != t {
        return Err(Error::dim(format!(
            "attention covers {} frames but the ISCMs have {}",
            attn.num_frames(),
            t
        )));
    }
    ScmSequence::new(
        mix(&iscms.speech, attn.speech(), f, t, c * c)?,
        mix(&iscms.noise, attn.noise(), f, t, c * c)?,
    )
}

/// `Φ₁ = Ψ₁`, `Φ_t = λ Φ_{t-1} + (1 - λ) Ψ_t`.
pub fn recursive_scm(iscms: &IscmSequence, lambda: f64) -> Result<ScmSequence> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Input(format!("forgetting factor must lie in (0, 1), got {}", lambda)));
    }
    let (f, t, c) = check_iscm(iscms)?;
    let cc = c * c;
    let smooth = |psi: &Tensor| -> Result<Tensor> {
        let mut re = psi.re().to_vec();
        let mut im = psi.im().unwrap().to_vec();
        for fi in 0..f {
            for ti in 1..t {
                let cur = (fi * t + ti) * cc;
                let prev = cur - cc;
                for k in 0..cc {
                    re[cur + k] = lambda * re[prev + k] + (1.0 - lambda) * re[cur + k];
                    im[cur + k] = lambda * im[prev + k] + (1.0 - lambda) * im[cur + k];
                }
            }
        }
        Tensor::complex(psi.shape(), re, im)
    };
    ScmSequence::new(smooth(&iscms.speech)?, smooth(&iscms.noise)?)
}

/// Forgetting factor for a time constant in seconds at the given frame rate.
pub fn default_lambda(hop: usize, sample_rate: u32, time_constant: f64) -> f64 {
    (-(hop as f64 / sample_rate as f64) / time_constant).exp()
}

/// Attention rows that reproduce [`recursive_scm`]: `a[t, 0] = λ^t`,
/// `a[t, τ] = (1 - λ) λ^(t-τ)` for `1 ≤ τ ≤ t`.
pub fn exponential_attention(frames: usize, lambda: f64) -> Tensor {
    let mut a = vec![0.0; frames * frames];
    for t in 0..frames {
        a[t * frames] = lambda.powi(t as i32);
        for tau in 1..=t {
            a[t * frames + tau] = (1.0 - lambda) * lambda.powi((t - tau) as i32);
        }
    }
    Tensor::real(&[frames, frames], a).expect("square rows")
}

/// Every row `1 / T`.
pub fn uniform_attention(frames: usize) -> Tensor {
    Tensor::full(&[frames, frames], 1.0 / frames.max(1) as f64)
}

/// Row `t` averages frames `t - half ..= t + half`, clipped to the utterance.
pub fn boxcar_attention(frames: usize, half_width: usize) -> Tensor {
    let mut a = vec![0.0; frames * frames];
    for t in 0..frames {
        let lo = t.saturating_sub(half_width);
        let hi = (t + half_width).min(frames - 1);
        let w = 1.0 / (hi - lo + 1) as f64;
        for tau in lo..=hi {
            a[t * frames + tau] = w;
        }
    }
    Tensor::real(&[frames, frames], a).expect("square rows")
}
