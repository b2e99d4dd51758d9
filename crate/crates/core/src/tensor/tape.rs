use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use super::linalg::{self, adjoint, split_matrix_shape};
use super::shape::{broadcast_map, broadcast_shape, check_axis, is_identity_map, split_axis, strides};
use super::{Dtype, Tensor};
use crate::error::{Error, Result};

/// A linear map (over the reals) that can be recorded on a [`Tape`].
///
/// `adjoint` receives the gradient of the output and returns the gradient of
/// the input in the real-composite convention; for maps with a complex input
/// that is the transpose of the map acting on the `(Re, Im)` planes.
pub trait LinearMap {
    fn apply(&self, input: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, grad: &Tensor) -> Result<Tensor>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Inv(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Softmax(usize),
    LayerNorm(usize, f64),
    Sum(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    Concat(Vec<usize>, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    BroadcastTo(usize),
    IndexSelect(usize, usize, Vec<usize>),
    Cos(usize),
    Sin(usize),
    Abs2(usize),
    Angle(usize),
    Ln(usize),
    Conj(usize),
    ToComplex(usize),
    RealPart(usize),
    ImagPart(usize),
    MakeComplex(usize, usize),
    Trace(usize),
    MaskedFill(usize, Rc<[bool]>),
    Linear(usize, Rc<dyn LinearMap>),
    Faulty(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of the operations of one forward pass.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it. A tape is used for a single forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        if requires_grad {
            self.push_raw(value, op, true)
        } else {
            self.push_raw(value, Op::Leaf, false)
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Var::backward`], indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf. `None` for leaves created with [`Tape::constant`].
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn require_real(t: &Tensor, op: &str) -> Result<()> {
    if t.is_complex() {
        return Err(Error::Dtype(format!("{} requires a real tensor", op)));
    }
    Ok(())
}

fn same_dtype(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.dtype() != b.dtype() {
        return Err(Error::Dtype(format!(
            "{} of {:?} and {:?}",
            op,
            a.dtype(),
            b.dtype()
        )));
    }
    Ok(())
}

fn binary(a: &Tensor, b: &Tensor, op: &str, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Tensor> {
    same_dtype(a, b, op)?;
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let (ma, mb) = (broadcast_map(a.shape(), &shape)?, broadcast_map(b.shape(), &shape)?);
    Ok(Tensor::from_fn_c(&shape, a.is_complex(), |i| f(a.at(ma[i]), b.at(mb[i]))))
}

/// Sums a gradient computed at a broadcast shape back onto `target`.
fn reduce_to(full: Tensor, target: &[usize], dtype: Dtype) -> Result<Tensor> {
    let map = broadcast_map(target, full.shape())?;
    let mut out = if full.shape() == target && is_identity_map(&map) {
        full
    } else {
        let mut out = Tensor::zeros(target, full.dtype());
        for (i, &j) in map.iter().enumerate() {
            out.re[j] += full.re[i];
            if let (Some(dst), Some(src)) = (out.im.as_mut(), full.im.as_ref()) {
                dst[j] += src[i];
            }
        }
        out
    };
    if dtype == Dtype::Real64 {
        out.im = None;
    }
    Ok(out)
}

fn permute_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    let in_shape = t.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = t.numel();
    let mut src = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut lin = 0usize;
    for _ in 0..total {
        src.push(lin);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            lin += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            lin -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_fn_c(&out_shape, t.is_complex(), |i| t.at(src[i]))
}

fn remove_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn sum_axis_tensor(t: &Tensor, axis: usize, scale: f64) -> Tensor {
    let (_, len, inner) = split_axis(t.shape(), axis);
    let shape = remove_axis(t.shape(), axis);
    Tensor::from_fn_c(&shape, t.is_complex(), |i| {
        let (o, k) = (i / inner, i % inner);
        let mut s = c(0.0, 0.0);
        for l in 0..len {
            s += t.at((o * len + l) * inner + k);
        }
        s * scale
    })
}

fn expand_axis(g: &Tensor, in_shape: &[usize], axis: usize, scale: f64) -> Tensor {
    let (_, len, inner) = split_axis(in_shape, axis);
    Tensor::from_fn_c(in_shape, g.is_complex(), |i| {
        let (o, k) = (i / (len * inner), i % inner);
        g.at(o * inner + k) * scale
    })
}

/// Applies `f` to each contiguous row along the last axis.
fn map_rows(t: &Tensor, mut f: impl FnMut(&[f64], &mut [f64])) -> Tensor {
    let d = *t.shape().last().unwrap_or(&1);
    let mut out = Tensor::zeros(t.shape(), Dtype::Real64);
    if d == 0 {
        return out;
    }
    for (src, dst) in t.re.chunks(d).zip(out.re.chunks_mut(d)) {
        f(src, dst);
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn is_complex(&self) -> bool {
        self.tape.nodes.borrow()[self.id].value.is_complex()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, &[self.id])
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary(&self.value(), &other.value(), "add", |a, b| a + b)?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary(&self.value(), &other.value(), "sub", |a, b| a - b)?;
        Ok(self.tape.push(v, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise (complex) product with broadcasting.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary(&self.value(), &other.value(), "mul", |a, b| a * b)?;
        Ok(self.tape.push(v, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary(&self.value(), &other.value(), "div", |a, b| a / b)?;
        Ok(self.tape.push(v, Op::Div(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let v = self.value().map_planes(|x| x * s);
        self.unary(v, Op::Scale(self.id, s))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a real constant to the real plane.
    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        let mut v = (*self.value()).clone();
        v.re.iter_mut().for_each(|x| *x += s);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = linalg::matmul(&self.value(), &other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// Batched matrix inverse over the last two axes.
    pub fn inv(&self) -> Result<Var<'t>> {
        let v = linalg::invert(&self.value())?;
        Ok(self.unary(v, Op::Inv(self.id)))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "relu")?;
        Ok(self.unary(x.map_planes(|v| v.max(0.0)), Op::Relu(self.id)))
    }

    pub fn clamp_min(&self, lo: f64) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "clamp_min")?;
        Ok(self.unary(x.map_planes(|v| v.max(lo)), Op::ClampMin(self.id, lo)))
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "softmax_rows")?;
        if x.ndim() == 0 {
            return Err(Error::dim("softmax_rows on a scalar"));
        }
        let y = map_rows(&x, |src, dst| {
            let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - m).exp();
                s += *d;
            }
            dst.iter_mut().for_each(|d| *d /= s);
        });
        Ok(self.unary(y, Op::Softmax(self.id)))
    }

    /// Normalization over the last axis (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "layer_norm")?;
        if x.ndim() == 0 {
            return Err(Error::dim("layer_norm on a scalar"));
        }
        let y = map_rows(&x, |src, dst| {
            let (mu, sigma) = row_moments(src, eps);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mu) / sigma;
            }
        });
        Ok(self.unary(y, Op::LayerNorm(self.id, eps)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let x = self.value();
        let mut s = c(0.0, 0.0);
        for i in 0..x.numel() {
            s += x.at(i);
        }
        let v = Tensor::from_fn_c(&[], x.is_complex(), |_| s);
        self.unary(v, Op::Sum(self.id))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        Ok(self.unary(sum_axis_tensor(&x, axis, 1.0), Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        let len = x.shape()[axis];
        if len == 0 {
            return Err(Error::dim("mean over an empty axis"));
        }
        Ok(self.unary(sum_axis_tensor(&x, axis, 1.0 / len as f64), Op::MeanAxis(self.id, axis)))
    }

    /// Concatenation along `axis`; all parts share dtype and other extents.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let tape = first.tape;
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = vals[0].shape().to_vec();
        check_axis(&base, axis)?;
        let mut total = 0;
        for v in &vals {
            same_dtype(&vals[0], v, "concat")?;
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::dim(format!("concat of {:?} and {:?} along {}", base, s, axis)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let complex = vals[0].is_complex();
        let mut out = Tensor::zeros(&shape, vals[0].dtype());
        let mut offset = 0;
        for v in &vals {
            let len = v.shape()[axis];
            for o in 0..outer {
                for l in 0..len {
                    for k in 0..inner {
                        let src = (o * len + l) * inner + k;
                        let dst = (o * total + offset + l) * inner + k;
                        out.re[dst] = v.re[src];
                        if complex {
                            out.im.as_mut().unwrap()[dst] = v.im.as_ref().unwrap()[src];
                        }
                    }
                }
            }
            offset += len;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(out, Op::Concat(ids.clone(), axis), &ids))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let mut seen = vec![false; x.ndim()];
        if axes.len() != x.ndim() || axes.iter().any(|&a| a >= x.ndim() || core::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(format!("invalid permutation {:?} for shape {:?}", axes, x.shape())));
        }
        Ok(self.unary(permute_tensor(&x, axes), Op::Permute(self.id, axes.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let nd = self.value().ndim();
        if nd < 2 {
            return Err(Error::dim("transpose needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let map = broadcast_map(x.shape(), shape)?;
        let v = Tensor::from_fn_c(shape, x.is_complex(), |i| x.at(map[i]));
        Ok(self.unary(v, Op::BroadcastTo(self.id)))
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        let (_, len, inner) = split_axis(x.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::dim(format!("index {} out of range {} on axis {}", bad, len, axis)));
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = indices.len();
        let n = indices.len();
        let v = Tensor::from_fn_c(&shape, x.is_complex(), |i| {
            let (o, rest) = (i / (n * inner), i % (n * inner));
            let (l, k) = (rest / inner, rest % inner);
            x.at((o * len + indices[l]) * inner + k)
        });
        Ok(self.unary(v, Op::IndexSelect(self.id, axis, indices.to_vec())))
    }

    pub fn cos(&self) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "cos")?;
        Ok(self.unary(x.map_planes(|v| v.cos()), Op::Cos(self.id)))
    }

    pub fn sin(&self) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "sin")?;
        Ok(self.unary(x.map_planes(|v| v.sin()), Op::Sin(self.id)))
    }

    /// Squared magnitude; real output for either dtype.
    pub fn abs2(&self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::from_fn_c(x.shape(), false, |i| c(x.at(i).norm_sqr(), 0.0));
        self.unary(v, Op::Abs2(self.id))
    }

    /// Principal-value argument; real output.
    pub fn angle(&self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::from_fn_c(x.shape(), false, |i| c(x.at(i).arg(), 0.0));
        self.unary(v, Op::Angle(self.id))
    }

    pub fn ln(&self) -> Result<Var<'t>> {
        let x = self.value();
        require_real(&x, "ln")?;
        Ok(self.unary(x.map_planes(|v| v.ln()), Op::Ln(self.id)))
    }

    pub fn conj(&self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        if let Some(im) = v.im.as_mut() {
            im.iter_mut().for_each(|x| *x = -*x);
        }
        self.unary(v, Op::Conj(self.id))
    }

    pub fn to_complex(&self) -> Var<'t> {
        let x = self.value();
        if x.is_complex() {
            return *self;
        }
        self.unary(x.to_complex(), Op::ToComplex(self.id))
    }

    pub fn real(&self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::real(x.shape(), x.re.clone()).expect("shape");
        self.unary(v, Op::RealPart(self.id))
    }

    pub fn imag(&self) -> Var<'t> {
        let x = self.value();
        let data = x.im.clone().unwrap_or_else(|| vec![0.0; x.numel()]);
        self.unary(Tensor::real(x.shape(), data).expect("shape"), Op::ImagPart(self.id))
    }

    /// Builds `re + i·im` from two real tensors of identical shape.
    pub fn complex(re: &Var<'t>, im: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (re.value(), im.value());
        require_real(&a, "complex")?;
        require_real(&b, "complex")?;
        if a.shape() != b.shape() {
            return Err(Error::dim(format!("complex from {:?} and {:?}", a.shape(), b.shape())));
        }
        let v = Tensor::complex(a.shape(), a.re.clone(), b.re.clone())?;
        Ok(re.tape.push(v, Op::MakeComplex(re.id, im.id), &[re.id, im.id]))
    }

    /// Trace over the last two axes.
    pub fn trace(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (batch, m, n) = split_matrix_shape(x.shape())?;
        if m != n {
            return Err(Error::dim(format!("trace of non-square shape {:?}", x.shape())));
        }
        let v = Tensor::from_fn_c(batch, x.is_complex(), |b| {
            (0..n).map(|i| x.at(b * n * n + i * n + i)).sum()
        });
        Ok(self.unary(v, Op::Trace(self.id)))
    }

    /// Replaces entries where `mask` is set by the matching entries of `fill`;
    /// no gradient flows through replaced entries.
    pub fn masked_fill(&self, mask: &[bool], fill: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        if mask.len() != x.numel() || fill.shape() != x.shape() {
            return Err(Error::dim("masked_fill operands must match the input shape"));
        }
        same_dtype(&x, fill, "masked_fill")?;
        let v = Tensor::from_fn_c(x.shape(), x.is_complex(), |i| if mask[i] { fill.at(i) } else { x.at(i) });
        Ok(self.unary(v, Op::MaskedFill(self.id, Rc::from(mask))))
    }

    pub fn linear_map(&self, map: Rc<dyn LinearMap>) -> Result<Var<'t>> {
        let v = map.apply(&self.value())?;
        Ok(self.unary(v, Op::Linear(self.id, map)))
    }

    /// Identity whose backward rule is deliberately wrong (gradient doubled).
    /// Exists only to prove that gradient checks can fail.
    #[doc(hidden)]
    pub fn faulty_identity(&self) -> Var<'t> {
        self.unary((*self.value()).clone(), Op::Faulty(self.id))
    }

    /// Reverse sweep from a real scalar.
    ///
    /// Every differentiable leaf receives a gradient (zeros when it does not
    /// reach `self`); constants receive none.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let loss = &nodes[self.id].value;
        if loss.numel() != 1 || loss.is_complex() {
            return Err(Error::Contract(format!(
                "backward needs a real scalar, got {:?} {:?}",
                loss.dtype(),
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[self.id].requires_grad {
            grads[self.id] = Some(Tensor::full(loss.shape(), 1.0));
        }
        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (p, gp) in node_backward(node, &g, &nodes)? {
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&gp),
                    None => grads[p] = Some(gp),
                }
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { grads })
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mu = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    (mu, (var + eps).sqrt())
}

fn node_backward(node: &Node, g: &Tensor, nodes: &[Node]) -> Result<Vec<(usize, Tensor)>> {
    let val = |p: usize| -> &Tensor { &nodes[p].value };
    let needs = |p: usize| nodes[p].requires_grad;
    let out = &node.value;
    let mut res = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if needs(*a) {
                res.push((*a, reduce_to(g.clone(), val(*a).shape(), val(*a).dtype())?));
            }
            if needs(*b) {
                res.push((*b, reduce_to(g.map_planes(|v| v * sign), val(*b).shape(), val(*b).dtype())?));
            }
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (ma, mb) = (broadcast_map(ta.shape(), g.shape())?, broadcast_map(tb.shape(), g.shape())?);
            let div = matches!(node.op, Op::Div(..));
            let complex = g.is_complex();
            if needs(*a) {
                let full = Tensor::from_fn_c(g.shape(), complex, |i| {
                    if div {
                        g.at(i) / tb.at(mb[i]).conj()
                    } else {
                        g.at(i) * tb.at(mb[i]).conj()
                    }
                });
                res.push((*a, reduce_to(full, ta.shape(), ta.dtype())?));
            }
            if needs(*b) {
                let full = Tensor::from_fn_c(g.shape(), complex, |i| {
                    if div {
                        -g.at(i) * (out.at(i) / tb.at(mb[i])).conj()
                    } else {
                        g.at(i) * ta.at(ma[i]).conj()
                    }
                });
                res.push((*b, reduce_to(full, tb.shape(), tb.dtype())?));
            }
        }
        Op::Scale(a, s) => res.push((*a, g.map_planes(|v| v * s))),
        Op::AddScalar(a) => res.push((*a, g.clone())),
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            if needs(*a) {
                let full = linalg::matmul(g, &adjoint(tb))?;
                res.push((*a, reduce_to(full, ta.shape(), ta.dtype())?));
            }
            if needs(*b) {
                let full = linalg::matmul(&adjoint(ta), g)?;
                res.push((*b, reduce_to(full, tb.shape(), tb.dtype())?));
            }
        }
        Op::Inv(a) => {
            let xh = adjoint(out);
            let ga = linalg::matmul(&linalg::matmul(&xh, g)?, &xh)?.map_planes(|v| -v);
            res.push((*a, ga));
        }
        Op::Relu(a) => {
            let x = val(*a);
            let gi = Tensor::from_fn_c(x.shape(), false, |i| c(if x.re[i] > 0.0 { g.re[i] } else { 0.0 }, 0.0));
            res.push((*a, gi));
        }
        Op::ClampMin(a, lo) => {
            let x = val(*a);
            let gi = Tensor::from_fn_c(x.shape(), false, |i| c(if x.re[i] > *lo { g.re[i] } else { 0.0 }, 0.0));
            res.push((*a, gi));
        }
        Op::Softmax(a) => {
            let d = *out.shape().last().unwrap();
            let mut gi = Tensor::zeros(out.shape(), Dtype::Real64);
            for r in 0..out.numel() / d.max(1) {
                let (y, gr) = (&out.re[r * d..(r + 1) * d], &g.re[r * d..(r + 1) * d]);
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    gi.re[r * d + j] = y[j] * (gr[j] - dot);
                }
            }
            res.push((*a, gi));
        }
        Op::LayerNorm(a, eps) => {
            let x = val(*a);
            let d = *x.shape().last().unwrap();
            let mut gi = Tensor::zeros(x.shape(), Dtype::Real64);
            for r in 0..x.numel() / d.max(1) {
                let xr = &x.re[r * d..(r + 1) * d];
                let (_, sigma) = row_moments(xr, *eps);
                let (y, gr) = (&out.re[r * d..(r + 1) * d], &g.re[r * d..(r + 1) * d]);
                let mg = gr.iter().sum::<f64>() / d as f64;
                let mgy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    gi.re[r * d + j] = (gr[j] - mg - y[j] * mgy) / sigma;
                }
            }
            res.push((*a, gi));
        }
        Op::Sum(a) => {
            let x = val(*a);
            let gv = g.at(0);
            let gi = Tensor::from_fn_c(x.shape(), x.is_complex(), |_| gv);
            res.push((*a, gi));
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let x = val(*a);
            let scale = if matches!(node.op, Op::MeanAxis(..)) {
                1.0 / x.shape()[*axis] as f64
            } else {
                1.0
            };
            res.push((*a, expand_axis(g, x.shape(), *axis, scale)));
        }
        Op::Concat(ids, axis) => {
            let shape = g.shape();
            let total = shape[*axis];
            let (_, _, inner) = split_axis(shape, *axis);
            let mut offset = 0;
            for &p in ids {
                let ps = val(p).shape();
                let len = ps[*axis];
                if needs(p) {
                    let gi = Tensor::from_fn_c(ps, g.is_complex(), |i| {
                        let (o, rest) = (i / (len * inner), i % (len * inner));
                        let (l, k) = (rest / inner, rest % inner);
                        g.at((o * total + offset + l) * inner + k)
                    });
                    res.push((p, gi));
                }
                offset += len;
            }
        }
        Op::Permute(a, axes) => {
            let mut inv = vec![0; axes.len()];
            for (i, &ax) in axes.iter().enumerate() {
                inv[ax] = i;
            }
            res.push((*a, permute_tensor(g, &inv)));
        }
        Op::Reshape(a) => res.push((*a, g.clone().reshape(val(*a).shape())?)),
        Op::BroadcastTo(a) => {
            let x = val(*a);
            res.push((*a, reduce_to(g.clone(), x.shape(), x.dtype())?));
        }
        Op::IndexSelect(a, axis, indices) => {
            let x = val(*a);
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let n = indices.len();
            let mut gi = Tensor::zeros(x.shape(), x.dtype());
            for o in 0..outer {
                for (l, &src) in indices.iter().enumerate() {
                    for k in 0..inner {
                        let (from, to) = ((o * n + l) * inner + k, (o * len + src) * inner + k);
                        gi.re[to] += g.re[from];
                        if let (Some(dst), Some(s)) = (gi.im.as_mut(), g.im.as_ref()) {
                            dst[to] += s[from];
                        }
                    }
                }
            }
            res.push((*a, gi));
        }
        Op::Cos(a) => {
            let x = val(*a);
            res.push((*a, Tensor::from_fn_c(x.shape(), false, |i| c(-x.re[i].sin() * g.re[i], 0.0))));
        }
        Op::Sin(a) => {
            let x = val(*a);
            res.push((*a, Tensor::from_fn_c(x.shape(), false, |i| c(x.re[i].cos() * g.re[i], 0.0))));
        }
        Op::Abs2(a) => {
            let x = val(*a);
            res.push((*a, Tensor::from_fn_c(x.shape(), x.is_complex(), |i| x.at(i) * (2.0 * g.re[i]))));
        }
        Op::Angle(a) => {
            let x = val(*a);
            let gi = Tensor::from_fn_c(x.shape(), x.is_complex(), |i| {
                let z = x.at(i);
                let r2 = z.norm_sqr();
                if r2 == 0.0 || !x.is_complex() {
                    c(0.0, 0.0)
                } else {
                    c(-z.im, z.re) * (g.re[i] / r2)
                }
            });
            res.push((*a, gi));
        }
        Op::Ln(a) => {
            let x = val(*a);
            res.push((*a, Tensor::from_fn_c(x.shape(), false, |i| c(g.re[i] / x.re[i], 0.0))));
        }
        Op::Conj(a) => {
            let mut gi = g.clone();
            if let Some(im) = gi.im.as_mut() {
                im.iter_mut().for_each(|v| *v = -*v);
            }
            res.push((*a, gi));
        }
        Op::ToComplex(a) => res.push((*a, Tensor::real(g.shape(), g.re.clone())?)),
        Op::RealPart(a) => {
            let x = val(*a);
            let gi = Tensor::from_fn_c(x.shape(), x.is_complex(), |i| c(g.re[i], 0.0));
            res.push((*a, gi));
        }
        Op::ImagPart(a) => {
            let x = val(*a);
            let gi = Tensor::from_fn_c(x.shape(), x.is_complex(), |i| c(0.0, g.re[i]));
            res.push((*a, gi));
        }
        Op::MakeComplex(a, b) => {
            if needs(*a) {
                res.push((*a, Tensor::real(g.shape(), g.re.clone())?));
            }
            if needs(*b) {
                let im = g.im.clone().unwrap_or_else(|| vec![0.0; g.numel()]);
                res.push((*b, Tensor::real(g.shape(), im)?));
            }
        }
        Op::Trace(a) => {
            let x = val(*a);
            let n = x.shape()[x.ndim() - 1];
            let mut gi = Tensor::zeros(x.shape(), x.dtype());
            for b in 0..g.numel() {
                for i in 0..n {
                    gi.set(b * n * n + i * n + i, g.at(b));
                }
            }
            res.push((*a, gi));
        }
        Op::MaskedFill(a, mask) => {
            let gi = Tensor::from_fn_c(g.shape(), g.is_complex(), |i| if mask[i] { c(0.0, 0.0) } else { g.at(i) });
            res.push((*a, gi));
        }
        Op::Linear(a, map) => res.push((*a, map.adjoint(g)?)),
        Op::Faulty(a) => res.push((*a, g.map_planes(|v| 2.0 * v))),
    }
    Ok(res.into_iter().filter(|(p, _)| needs(*p)).collect())
}
