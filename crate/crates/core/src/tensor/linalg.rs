use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use super::shape::{broadcast_map, broadcast_shape};
use super::{Dtype, Tensor};
use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-12;

pub(crate) fn split_matrix_shape(shape: &[usize]) -> Result<(&[usize], usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(format!("expected a matrix, got shape {:?}", shape)));
    }
    let n = shape.len();
    Ok((&shape[..n - 2], shape[n - 2], shape[n - 1]))
}

/// Batched matrix product over the last two axes; leading axes broadcast.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dtype() != b.dtype() {
        return Err(Error::Dtype(format!(
            "matmul of {:?} and {:?}",
            a.dtype(),
            b.dtype()
        )));
    }
    let (ab, m, k) = split_matrix_shape(a.shape())?;
    let (bb, k2, n) = split_matrix_shape(b.shape())?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let batch = broadcast_shape(ab, bb)?;
    let amap = broadcast_map(ab, &batch)?;
    let bmap = broadcast_map(bb, &batch)?;
    let mut shape = batch.clone();
    shape.push(m);
    shape.push(n);
    let mut out = Tensor::zeros(&shape, a.dtype());
    let nb = amap.len();
    for i in 0..nb {
        let (ao, bo, co) = (amap[i] * m * k, bmap[i] * k * n, i * m * n);
        kernel(a, ao, b, bo, &mut out, co, m, k, n);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn kernel(a: &Tensor, ao: usize, b: &Tensor, bo: usize, c: &mut Tensor, co: usize, m: usize, k: usize, n: usize) {
    let (are, bre) = (&a.re[ao..ao + m * k], &b.re[bo..bo + k * n]);
    match (a.im.as_ref(), b.im.as_ref()) {
        (Some(aim), Some(bim)) => {
            let (aim, bim) = (&aim[ao..ao + m * k], &bim[bo..bo + k * n]);
            let cim = c.im.as_mut().expect("complex output");
            let cre = &mut c.re[co..co + m * n];
            let cim = &mut cim[co..co + m * n];
            for i in 0..m {
                for p in 0..k {
                    let (xr, xi) = (are[i * k + p], aim[i * k + p]);
                    for j in 0..n {
                        let (yr, yi) = (bre[p * n + j], bim[p * n + j]);
                        cre[i * n + j] += xr * yr - xi * yi;
                        cim[i * n + j] += xr * yi + xi * yr;
                    }
                }
            }
        }
        _ => {
            let cre = &mut c.re[co..co + m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = are[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let row = &bre[p * n..p * n + n];
                    for (cv, &y) in cre[i * n..i * n + n].iter_mut().zip(row) {
                        *cv += x * y;
                    }
                }
            }
        }
    }
}

/// Conjugate transpose over the last two axes.
pub(crate) fn adjoint(t: &Tensor) -> Tensor {
    let shape = t.shape();
    let nd = shape.len();
    let (m, n) = (shape[nd - 2], shape[nd - 1]);
    let batch: usize = shape[..nd - 2].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape.swap(nd - 2, nd - 1);
    let mut out = Tensor::zeros(&out_shape, t.dtype());
    for b in 0..batch {
        let o = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out.re[o + j * m + i] = t.re[o + i * n + j];
                if let (Some(src), Some(dst)) = (t.im.as_ref(), out.im.as_mut()) {
                    dst[o + j * m + i] = -src[o + i * n + j];
                }
            }
        }
    }
    out
}

/// LU with partial pivoting on a single `n × n` matrix, returning its inverse.
///
/// Fails when a pivot falls below `SINGULAR_PIVOT_RTOL` times the largest
/// entry magnitude of the input.
pub(crate) fn lu_inverse(a: &[Complex64], n: usize) -> Option<Vec<Complex64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let tol = SINGULAR_PIVOT_RTOL * scale;
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (mut piv, mut best) = (col, lu[col * n + col].norm());
        for r in col + 1..n {
            let v = lu[r * n + col].norm();
            if v > best {
                piv = r;
                best = v;
            }
        }
        if best < tol {
            return None;
        }
        if piv != col {
            for j in 0..n {
                lu.swap(col * n + j, piv * n + j);
            }
            perm.swap(col, piv);
        }
        let d = lu[col * n + col];
        for r in col + 1..n {
            let f = lu[r * n + col] / d;
            lu[r * n + col] = f;
            for j in col + 1..n {
                let u = lu[col * n + j];
                lu[r * n + j] -= f * u;
            }
        }
    }
    // Solve L U X = P for each unit column.
    let mut inv = vec![Complex64::new(0.0, 0.0); n * n];
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for i in 0..n {
            let mut s = if perm[i] == c {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            for j in 0..i {
                s -= lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= lu[i * n + j] * x[j];
            }
            x[i] = s / lu[i * n + i];
        }
        for i in 0..n {
            inv[i * n + c] = x[i];
        }
    }
    Some(inv)
}

/// Batched inverse over the last two axes.
pub fn invert(a: &Tensor) -> Result<Tensor> {
    let (batch, m, n) = split_matrix_shape(a.shape())?;
    if m != n {
        return Err(Error::dim(format!("inverse of non-square shape {:?}", a.shape())));
    }
    let nb: usize = batch.iter().product();
    let mut out = Tensor::zeros(a.shape(), a.dtype());
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for b in 0..nb {
        let o = b * n * n;
        for (i, z) in buf.iter_mut().enumerate() {
            *z = a.at(o + i);
        }
        let inv = lu_inverse(&buf, n).ok_or(Error::Singular { index: b })?;
        for (i, z) in inv.into_iter().enumerate() {
            out.re[o + i] = z.re;
            if let Some(im) = out.im.as_mut() {
                im[o + i] = z.im;
            }
        }
    }
    if a.dtype() == Dtype::Real64 {
        debug_assert!(out.im.is_none());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_column() {
        let a = Tensor::real(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::real(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().re(), &[3.0, 4.0]);
    }

    #[test]
    fn diagonal_inverse() {
        let a = Tensor::real(&[2, 2], vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(invert(&a).unwrap().re(), &[0.5, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = Tensor::real(&[2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(invert(&a), Err(Error::Singular { index: 0 }));
    }

    #[test]
    fn complex_inverse_round_trip() {
        let a = Tensor::complex(&[2, 2], vec![1.0, 2.0, -0.5, 3.0], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let inv = invert(&a).unwrap();
        let eye = matmul(&a, &inv).unwrap();
        let expect = Tensor::eye(2).to_complex();
        assert!(eye.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn batch_broadcast() {
        let a = Tensor::real(&[3, 2, 2], (0..12).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::eye(2);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 2, 2]);
        assert_eq!(c.re(), a.re());
    }
}
