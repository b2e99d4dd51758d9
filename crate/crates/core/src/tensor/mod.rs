//! Dense real and complex tensors with reverse-mode automatic
//! differentiation.
//!
//! Complex tensors are stored as two row-major planes (real and imaginary).
//! Gradients of complex quantities follow the real-composite convention: for
//! a real loss `L` and a complex value `z = x + iy`, the stored gradient is
//! `dL/dx + i dL/dy`. With that convention the usual rules hold verbatim,
//! e.g. `dA = dC Bᴴ` for `C = A B` and `dA = -A⁻ᴴ dC A⁻ᴴ` for the inverse.

mod gradcheck;
pub(crate) mod linalg;
mod shape;
mod tape;

pub use gradcheck::{grad_check, grad_check_coords, SCALE_FLOOR};
pub use linalg::{invert, matmul};
pub use shape::broadcast_shape;
pub use tape::{Gradients, LinearMap, Tape, Var};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Real64,
    Complex128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn real(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            re: data,
            im: None,
        })
    }

    pub fn complex(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if numel(shape) != re.len() || re.len() != im.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}/{}",
                shape,
                numel(shape),
                re.len(),
                im.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            re,
            im: Some(im),
        })
    }

    pub fn from_complex(shape: &[usize], data: &[Complex64]) -> Result<Self> {
        let re = data.iter().map(|z| z.re).collect();
        let im = data.iter().map(|z| z.im).collect();
        Tensor::complex(shape, re, im)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            re: vec![value],
            im: None,
        }
    }

    pub fn zeros(shape: &[usize], dtype: Dtype) -> Self {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: match dtype {
                Dtype::Real64 => None,
                Dtype::Complex128 => Some(vec![0.0; n]),
            },
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape, other.dtype())
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            re: vec![value; numel(shape)],
            im: None,
        }
    }

    /// `n × n` real identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n], Dtype::Real64);
        for i in 0..n {
            t.re[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    pub fn dtype(&self) -> Dtype {
        if self.im.is_some() {
            Dtype::Complex128
        } else {
            Dtype::Real64
        }
    }

    pub fn is_complex(&self) -> bool {
        self.im.is_some()
    }

    /// Real plane (the whole data for real tensors).
    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> Option<&[f64]> {
        self.im.as_deref()
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> Option<&mut [f64]> {
        self.im.as_deref_mut()
    }

    pub fn at(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im.as_ref().map_or(0.0, |im| im[i]))
    }

    pub fn set(&mut self, i: usize, z: Complex64) {
        self.re[i] = z.re;
        if let Some(im) = self.im.as_mut() {
            im[i] = z.im;
        }
    }

    pub fn to_complex_vec(&self) -> Vec<Complex64> {
        (0..self.numel()).map(|i| self.at(i)).collect()
    }

    /// Value of a single-element real tensor.
    pub fn item(&self) -> f64 {
        self.re[0]
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f64>, Option<Vec<f64>>) {
        (self.shape, self.re, self.im)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Complex copy of a tensor (identity for complex tensors).
    pub fn to_complex(&self) -> Tensor {
        let mut t = self.clone();
        if t.im.is_none() {
            t.im = Some(vec![0.0; t.re.len()]);
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().all(|v| v.is_finite())
            && self
                .im
                .as_ref()
                .is_none_or(|im| im.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute difference between two same-shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        (0..self.numel())
            .map(|i| (self.at(i) - other.at(i)).norm())
            .fold(0.0, f64::max)
    }

    pub(crate) fn map_planes(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            re: self.re.iter().map(|&v| f(v)).collect(),
            im: self.im.as_ref().map(|im| im.iter().map(|&v| f(v)).collect()),
        }
    }

    pub(crate) fn from_fn_c(shape: &[usize], complex: bool, f: impl Fn(usize) -> Complex64) -> Tensor {
        let n = numel(shape);
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(if complex { n } else { 0 });
        for i in 0..n {
            let z = f(i);
            re.push(z.re);
            if complex {
                im.push(z.im);
            }
        }
        Tensor {
            shape: shape.to_vec(),
            re,
            im: complex.then_some(im),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        match (self.im.as_mut(), other.im.as_ref()) {
            (Some(a), Some(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            (None, Some(b)) => self.im = Some(b.clone()),
            _ => {}
        }
    }
}
