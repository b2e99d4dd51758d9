use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Trailing-axis broadcast of two shapes (numpy rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::dim(format!("cannot broadcast {:?} with {:?}", a, b)));
        };
    }
    Ok(out)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every linear index of `out`, the linear index of the broadcast source.
pub(crate) fn broadcast_map(src: &[usize], out: &[usize]) -> Result<Vec<usize>> {
    if src.len() > out.len() {
        return Err(Error::dim(format!("cannot broadcast {:?} to {:?}", src, out)));
    }
    let pad = out.len() - src.len();
    let src_strides = strides(src);
    let mut eff = vec![0usize; out.len()];
    for i in 0..src.len() {
        if src[i] == out[pad + i] {
            eff[pad + i] = src_strides[i];
        } else if src[i] != 1 {
            return Err(Error::dim(format!("cannot broadcast {:?} to {:?}", src, out)));
        }
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out.len()];
    let mut lin = 0usize;
    for _ in 0..total {
        map.push(lin);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            lin += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            lin -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(map)
}

pub(crate) fn is_identity_map(map: &[usize]) -> bool {
    map.iter().enumerate().all(|(i, &j)| i == j)
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {} out of range for shape {:?}", axis, shape)));
    }
    Ok(())
}
