use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

#[allow(unused_imports)]
use num_traits::Float;

use super::aggregate::ScmSequence;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::linalg::lu_inverse;
use crate::tensor::Tensor;

/// Relative diagonal loading `δ = loading · Re tr(Φⁿ) / C`.
pub const DEFAULT_LOADING: f64 = 1e-6;
/// Absolute lower bound on the diagonal loading.
pub const LOADING_FLOOR: f64 = 1e-10;
/// Passthrough when `|tr(X)| ≤ FALLBACK_RTOL · ‖X‖_F`, `X = (Φⁿ)⁻¹ Φˣ`.
pub const FALLBACK_RTOL: f64 = 1e-10;
/// Largest tolerated `max |A - Aᴴ| / max |A|`.
pub const HERMITIAN_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Per-(f, t) MVDR filters, complex `[F, T, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerWeights {
    w: Tensor,
}

impl BeamformerWeights {
    pub fn new(w: Tensor) -> Result<Self> {
        if w.ndim() != 3 || !w.is_complex() {
            return Err(Error::dim(format!("beamformer weights must be complex [F, T, C], got {:?}", w.shape())));
        }
        if !w.is_finite() {
            return Err(Error::Numeric("non-finite beamformer weights".into()));
        }
        Ok(BeamformerWeights { w })
    }

    pub fn values(&self) -> &Tensor {
        &self.w
    }

    /// `(F, T, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.w.shape();
        (s[0], s[1], s[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MvdrSolution {
    pub weights: Vec<Complex64>,
    /// The trace was degenerate and `u_r` was returned.
    pub fallback: bool,
    /// Frobenius condition number of the loaded noise SCM.
    pub condition: f64,
}

/// Per-(f, t) outcome flags in `f * T + t` order.
#[derive(Clone, Debug, PartialEq)]
pub struct MvdrStats {
    pub fallback: Vec<bool>,
    pub condition: Vec<f64>,
}

/// Rejects matrices whose anti-Hermitian part exceeds [`HERMITIAN_TOL`]
/// relative to the largest entry.
pub fn check_hermitian(a: &[Complex64], c: usize) -> Result<()> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for i in 0..c {
        for j in i..c {
            worst = worst.max((a[i * c + j] - a[j * c + i].conj()).norm());
        }
    }
    if worst > HERMITIAN_TOL * scale || !worst.is_finite() {
        return Err(Error::Contract(format!(
            "matrix is not Hermitian (deviation {:e}, scale {:e})",
            worst, scale
        )));
    }
    Ok(())
}

fn frobenius(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Loaded `Φⁿ + δ I` with `δ = max(loading · Re tr(Φⁿ) / C, LOADING_FLOOR)`.
pub(crate) fn load_diagonal(phi_n: &[Complex64], c: usize, loading: f64) -> Vec<Complex64> {
    let tr: f64 = (0..c).map(|i| phi_n[i * c + i].re).sum();
    let delta = (loading * tr / c as f64).max(LOADING_FLOOR);
    let mut out = phi_n.to_vec();
    for i in 0..c {
        out[i * c + i] += delta;
    }
    out
}

/// `w = (Φⁿ)⁻¹ Φˣ u_r / tr((Φⁿ)⁻¹ Φˣ)` for row-major `C × C` inputs.
pub fn mvdr_weights(
    phi_x: &[Complex64],
    phi_n: &[Complex64],
    c: usize,
    reference: usize,
    loading: f64,
) -> Result<MvdrSolution> {
    if c == 0 || phi_x.len() != c * c || phi_n.len() != c * c {
        return Err(Error::dim(format!("MVDR inputs must be {0} x {0}", c)));
    }
    if reference >= c {
        return Err(Error::Input(format!("reference {} out of range for {} channels", reference, c)));
    }
    if !(loading >= 0.0 && loading.is_finite()) {
        return Err(Error::Input(format!("invalid diagonal loading {}", loading)));
    }
    check_hermitian(phi_x, c)?;
    check_hermitian(phi_n, c)?;
    let loaded = load_diagonal(phi_n, c, loading);
    let inv = lu_inverse(&loaded, c).ok_or(Error::Singular { index: 0 })?;
    let condition = frobenius(&loaded) * frobenius(&inv);
    let mut x = vec![ZERO; c * c];
    for i in 0..c {
        for k in 0..c {
            let a = inv[i * c + k];
            for j in 0..c {
                x[i * c + j] += a * phi_x[k * c + j];
            }
        }
    }
    let tr: Complex64 = (0..c).map(|i| x[i * c + i]).sum();
    if tr.norm() <= FALLBACK_RTOL * frobenius(&x) || !tr.is_finite() {
        let mut u = vec![ZERO; c];
        u[reference] = Complex64::new(1.0, 0.0);
        return Ok(MvdrSolution {
            weights: u,
            fallback: true,
            condition,
        });
    }
    Ok(MvdrSolution {
        weights: (0..c).map(|i| x[i * c + reference] / tr).collect(),
        fallback: false,
        condition,
    })
}

/// [`mvdr_weights`] for every (f, t) of an SCM sequence.
pub fn beamformer_weights(scm: &ScmSequence, reference: usize, loading: f64) -> Result<(BeamformerWeights, MvdrStats)> {
    let (f, t, c) = scm.dims();
    let cc = c * c;
    let mut re = vec![0.0; f * t * c];
    let mut im = vec![0.0; f * t * c];
    let mut stats = MvdrStats {
        fallback: Vec::with_capacity(f * t),
        condition: Vec::with_capacity(f * t),
    };
    let mut px = vec![ZERO; cc];
    let mut pn = vec![ZERO; cc];
    for fi in 0..f {
        for ti in 0..t {
            let base = (fi * t + ti) * cc;
            for k in 0..cc {
                px[k] = scm.speech.at(base + k);
                pn[k] = scm.noise.at(base + k);
            }
            let sol = mvdr_weights(&px, &pn, c, reference, loading).map_err(|e| match e {
                Error::Singular { .. } => Error::SingularAt { bin: fi, frame: ti },
                Error::Contract(m) => Error::Contract(format!("{} at bin {}, frame {}", m, fi, ti)),
                other => other,
            })?;
            for (k, z) in sol.weights.iter().enumerate() {
                re[(fi * t + ti) * c + k] = z.re;
                im[(fi * t + ti) * c + k] = z.im;
            }
            stats.fallback.push(sol.fallback);
            stats.condition.push(sol.condition);
        }
    }
    Ok((BeamformerWeights::new(Tensor::complex(&[f, t, c], re, im)?)?, stats))
}

/// `x̂[f, t] = w[f, t]ᴴ y[f, t]` as a single-channel spectrogram.
pub fn apply_beamformer(spec: &Spectrogram, w: &BeamformerWeights) -> Result<Spectrogram> {
    let (f, t, c) = w.dims();
    if (spec.num_bins(), spec.num_frames(), spec.num_channels()) != (f, t, c) {
        return Err(Error::dim(format!(
            "weights are [{}, {}, {}] but the spectrogram has {} channels, {} bins, {} frames",
            f,
            t,
            c,
            spec.num_channels(),
            spec.num_bins(),
            spec.num_frames()
        )));
    }
    let mut re = vec![0.0; f * t];
    let mut im = vec![0.0; f * t];
    for fi in 0..f {
        for ti in 0..t {
            let mut acc = ZERO;
            for ch in 0..c {
                acc += w.w.at((fi * t + ti) * c + ch).conj() * spec.get(ch, fi, ti);
            }
            re[fi * t + ti] = acc.re;
            im[fi * t + ti] = acc.im;
        }
    }
    spec.with_data(Tensor::complex(&[1, f, t], re, im)?)
}
