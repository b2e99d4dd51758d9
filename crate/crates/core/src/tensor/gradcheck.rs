use alloc::format;
use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const SCALE_FLOOR: f64 = 1e-3;

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.numel() != 1 || v.is_complex() {
        return Err(Error::Contract(format!("grad_check needs a real scalar function, got {:?}", v.shape())));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(Error::Numeric(format!("function value {} is not finite", x)));
    }
    Ok(x)
}

/// Maximum relative error between reverse-mode gradients and central
/// differences over every coordinate (both planes of complex inputs).
///
/// The relative error of one coordinate is
/// `|analytic - fd| / max(|analytic|, |fd|, floor)` where `floor` is
/// [`SCALE_FLOOR`] times the largest gradient magnitude seen over all checked
/// coordinates (and at least 1e-12). The floor keeps coordinates whose exact
/// gradient vanishes (e.g. softmax-invariant biases) from turning
/// finite-difference round-off into unit relative errors.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.numel()).map(move |i| (k, i)))
        .collect();
    grad_check_coords(f, inputs, eps, &coords)
}

/// Like [`grad_check`], restricted to `(input, flat element)` coordinates.
pub fn grad_check_coords<F>(f: F, inputs: &[Tensor], eps: f64, coords: &[(usize, usize)]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Input(format!("eps must lie in (0, 1e-2], got {}", eps)));
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    if !loss.value().is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    let grads = loss.backward()?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(v).cloned().expect("param gradient"))
        .collect();

    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(coords.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for &(k, i) in coords {
        if k >= inputs.len() || i >= inputs[k].numel() {
            return Err(Error::Input(format!("coordinate ({}, {}) out of range", k, i)));
        }
        let planes = if inputs[k].is_complex() { 2 } else { 1 };
        for plane in 0..planes {
            let orig = if plane == 0 { inputs[k].re()[i] } else { inputs[k].im().unwrap()[i] };
            let set = |w: &mut Vec<Tensor>, v: f64| {
                if plane == 0 {
                    w[k].re_mut()[i] = v;
                } else {
                    w[k].im_mut().unwrap()[i] = v;
                }
            };
            set(&mut work, orig + eps);
            let plus = eval(&f, &work)?;
            set(&mut work, orig - eps);
            let minus = eval(&f, &work)?;
            set(&mut work, orig);
            let fd = (plus - minus) / (2.0 * eps);
            let a = if plane == 0 { analytic[k].re()[i] } else { analytic[k].im().unwrap()[i] };
            if !a.is_finite() || !fd.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at input {} element {}", k, i)));
            }
            pairs.push((a, fd));
        }
    }
    let scale = pairs.iter().fold(0.0f64, |m, &(a, fd)| m.max(a.abs()).max(fd.abs()));
    let floor = (SCALE_FLOOR * scale).max(1e-12);
    Ok(pairs
        .iter()
        .map(|&(a, fd)| (a - fd).abs() / a.abs().max(fd.abs()).max(floor))
        .fold(0.0, f64::max))
}
