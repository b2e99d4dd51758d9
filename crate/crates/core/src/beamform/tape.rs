use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use super::mvdr::{check_hermitian, FALLBACK_RTOL, LOADING_FLOOR};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Spectrogram data reordered to `[F, T, C]`.
pub fn spectrogram_ftc(spec: &Spectrogram) -> Result<Tensor> {
    let (c, f, t) = (spec.num_channels(), spec.num_bins(), spec.num_frames());
    let mut re = vec![0.0; f * t * c];
    let mut im = vec![0.0; f * t * c];
    for ch in 0..c {
        for fi in 0..f {
            for ti in 0..t {
                let z = spec.get(ch, fi, ti);
                re[(fi * t + ti) * c + ch] = z.re;
                im[(fi * t + ti) * c + ch] = z.im;
            }
        }
    }
    Tensor::complex(&[f, t, c], re, im)
}

/// Recorded `Φ[f, t] = Σ_τ a[t, τ] Ψ[f, τ]` for constant ISCMs `[F, T, C, C]`
/// and real attention `[T, T]`.
pub fn aggregate_on_tape<'t>(psi: &Tensor, attn: &Var<'t>) -> Result<Var<'t>> {
    let s = psi.shape();
    if s.len() != 4 || s[2] != s[3] || !psi.is_complex() {
        return Err(Error::dim(format!("ISCMs must be complex [F, T, C, C], got {:?}", s)));
    }
    let (f, t, c) = (s[0], s[1], s[2]);
    if attn.shape() != [t, t] || attn.is_complex() {
        return Err(Error::dim(format!(
            "attention must be real [{}, {}], got {:?}",
            t,
            t,
            attn.shape()
        )));
    }
    let psi = attn.tape().constant(psi.clone().reshape(&[f, t, c * c])?);
    attn.to_complex().matmul(&psi)?.reshape(&[f, t, c, c])
}

fn check_all_hermitian(phi: &Tensor) -> Result<()> {
    let s = phi.shape();
    let (t, c) = (s[1], s[2]);
    let mut buf = vec![Complex64::new(0.0, 0.0); c * c];
    for b in 0..s[0] * t {
        for (k, z) in buf.iter_mut().enumerate() {
            *z = phi.at(b * c * c + k);
        }
        check_hermitian(&buf, c).map_err(|e| match e {
            Error::Contract(m) => Error::Contract(format!("{} at bin {}, frame {}", m, b / t, b % t)),
            other => other,
        })?;
    }
    Ok(())
}

/// Recorded MVDR filters `[F, T, C]` from SCMs `[F, T, C, C]`, with the
/// per-(f, t) passthrough flags. Flagged entries carry no gradient.
pub fn mvdr_on_tape<'t>(
    phi_x: &Var<'t>,
    phi_n: &Var<'t>,
    reference: usize,
    loading: f64,
) -> Result<(Var<'t>, Vec<bool>)> {
    let s = phi_x.shape();
    if s.len() != 4 || s[2] != s[3] || phi_n.shape() != s || !phi_x.is_complex() || !phi_n.is_complex() {
        return Err(Error::dim(format!("SCMs must be complex [F, T, C, C], got {:?}", s)));
    }
    let (f, t, c) = (s[0], s[1], s[2]);
    if reference >= c {
        return Err(Error::Input(format!("reference {} out of range for {} channels", reference, c)));
    }
    check_all_hermitian(&phi_x.value())?;
    check_all_hermitian(&phi_n.value())?;
    let tape = phi_x.tape();

    let delta = phi_n
        .trace()?
        .real()
        .scale(loading / c as f64)
        .clamp_min(LOADING_FLOOR)?
        .reshape(&[f, t, 1, 1])?
        .to_complex();
    let eye = tape.constant(Tensor::eye(c).to_complex());
    let loaded = phi_n.add(&delta.mul(&eye)?)?;
    let inv = loaded.inv().map_err(|e| match e {
        Error::Singular { index } => Error::SingularAt {
            bin: index / t,
            frame: index % t,
        },
        other => other,
    })?;
    let x = inv.matmul(phi_x)?;
    let tr = x.trace()?;

    let xv = x.value();
    let trv = tr.value();
    let cc = c * c;
    let flags: Vec<bool> = (0..f * t)
        .map(|b| {
            let norm = (0..cc).map(|k| xv.at(b * cc + k).norm_sqr()).sum::<f64>().sqrt();
            let z = trv.at(b);
            z.norm() <= FALLBACK_RTOL * norm || !z.is_finite()
        })
        .collect();
    let safe_tr = tr
        .masked_fill(&flags, &Tensor::full(&[f, t], 1.0).to_complex())?
        .reshape(&[f, t, 1])?;
    let column = x.index_select(3, &[reference])?.reshape(&[f, t, c])?;
    let w = column.div(&safe_tr)?;

    let mut passthrough = Tensor::zeros(&[f, t, c], crate::tensor::Dtype::Complex128);
    let mut mask = vec![false; f * t * c];
    for b in 0..f * t {
        passthrough.set(b * c + reference, Complex64::new(1.0, 0.0));
        for ch in 0..c {
            mask[b * c + ch] = flags[b];
        }
    }
    Ok((w.masked_fill(&mask, &passthrough)?, flags))
}

/// Recorded `wᴴ y` for constant `y` `[F, T, C]`; returns `[F, T]`.
pub fn apply_on_tape<'t>(w: &Var<'t>, y: &Tensor) -> Result<Var<'t>> {
    if w.shape() != y.shape() {
        return Err(Error::dim(format!(
            "weights {:?} and observations {:?} differ",
            w.shape(),
            y.shape()
        )));
    }
    let y = w.tape().constant(y.clone());
    w.conj().mul(&y)?.sum_axis(2)
}
