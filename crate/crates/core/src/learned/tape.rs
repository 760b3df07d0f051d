//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A define-by-run tape: operations append nodes holding values and enough
//! context for the backward pass. The op set is exactly what the learned
//! solvers need: periodic (transposed) convolutions, pointwise
//! nonlinearities, matrix products for coordinate MLPs, orthonormal Haar
//! DWT/IDWT, an FFT convolution layer, the exact Laplacian, and the losses.
//!
//! Tensor shapes: feature maps are `[channels, spatial...]`, convolution
//! kernels `[c_out, c_in, k...]`, matrices `[rows, cols]`, scalars `[1]`.

use rayon::prelude::*;

use crate::fft;
use crate::grid::Grid;
use crate::linsolve::{LaplaceOperator, LinearOp};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor data/shape mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Channel count and spatial dims of a feature map.
    fn map_dims(&self) -> (usize, &[usize]) {
        (self.shape[0], &self.shape[1..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlin {
    Sin,
    Tanh,
}

impl Nonlin {
    fn eval(self, x: f64) -> f64 {
        match self {
            Nonlin::Sin => x.sin(),
            Nonlin::Tanh => x.tanh(),
        }
    }

    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Nonlin::Sin => x.cos(),
            Nonlin::Tanh => 1.0 - y * y,
        }
    }
}

/// Convolution anchor: centered for odd stencil kernels, zero for
/// full-lattice circulant kernels (offset 0 multiplies the unshifted input).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Centered,
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScaled(Var, Var, f64),
    Pointwise(Var, Nonlin),
    Matmul(Var, Var),
    BiasRow(Var, Var),
    Conv { x: Var, k: Var, stride: usize, anchor: Anchor },
    ConvT { x: Var, k: Var, stride: usize },
    Dwt(Var),
    Idwt(Var),
    FftMul(Var, Var),
    MeanSub(Var),
    Laplace(Var),
    SumSq(Var),
    Mse(Var, Var),
    RelL2(Var, Var),
    Proj(Var, Vec<f64>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    laplace: Option<LaplaceOperator>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Install the grid whose exact Laplacian the `laplace` op applies.
    pub fn with_grid(grid: &Grid) -> Tape {
        Tape { nodes: Vec::new(), laplace: Some(LaplaceOperator::new(grid)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn leaf(&mut self, value: Tensor, requires: bool) -> Var {
        self.push(value, Op::Leaf, requires)
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "add: shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let t = Tensor { shape: va.shape.clone(), data };
        let req = self.requires(a) || self.requires(b);
        self.push(t, Op::Add(a, b), req)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "sub: shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let t = Tensor { shape: va.shape.clone(), data };
        let req = self.requires(a) || self.requires(b);
        self.push(t, Op::Sub(a, b), req)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = &self.nodes[a.0].value;
        let t = Tensor { shape: va.shape.clone(), data: va.data.iter().map(|x| c * x).collect() };
        let req = self.requires(a);
        self.push(t, Op::Scale(a, c), req)
    }

    /// `a + c·b`
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "add_scaled: shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + c * y).collect();
        let t = Tensor { shape: va.shape.clone(), data };
        let req = self.requires(a) || self.requires(b);
        self.push(t, Op::AddScaled(a, b, c), req)
    }

    pub fn pointwise(&mut self, a: Var, kind: Nonlin) -> Var {
        let va = &self.nodes[a.0].value;
        let t = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().map(|&x| kind.eval(x)).collect(),
        };
        let req = self.requires(a);
        self.push(t, Op::Pointwise(a, kind), req)
    }

    /// `[m,k]·[k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape.len(), 2, "matmul: lhs must be a matrix");
        assert_eq!(vb.shape.len(), 2, "matmul: rhs must be a matrix");
        assert_eq!(va.shape[1], vb.shape[0], "matmul: inner dims differ");
        let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
        let data = matmul_nn(&va.data, &vb.data, m, k, n);
        let t = Tensor { shape: vec![m, n], data };
        let req = self.requires(a) || self.requires(b);
        self.push(t, Op::Matmul(a, b), req)
    }

    /// Broadcast a `[n]` bias over the rows of `[m,n]`.
    pub fn bias_row(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        assert_eq!(vx.shape.len(), 2, "bias_row: input must be a matrix");
        assert_eq!(vb.shape, vec![vx.shape[1]], "bias_row: bias shape mismatch");
        let n = vx.shape[1];
        let mut data = vx.data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += vb.data[i % n];
        }
        let t = Tensor { shape: vx.shape.clone(), data };
        let req = self.requires(x) || self.requires(bias);
        self.push(t, Op::BiasRow(x, bias), req)
    }

    /// Periodic convolution with stride; kernel `[c_out, c_in, k...]`.
    pub fn conv(&mut self, x: Var, k: Var, stride: usize, anchor: Anchor) -> Var {
        let (vx, vk) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
        let out = conv_forward(vx, vk, stride, anchor);
        let req = self.requires(x) || self.requires(k);
        self.push(out, Op::Conv { x, k, stride, anchor }, req)
    }

    /// Transposed convolution (adjoint of `conv` with the same kernel):
    /// maps `[c_out, m...]` back to `[c_in, m·stride...]`.
    pub fn conv_transpose(&mut self, x: Var, k: Var, stride: usize) -> Var {
        let (vx, vk) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
        let out = conv_transpose_forward(vx, vk, stride);
        let req = self.requires(x) || self.requires(k);
        self.push(out, Op::ConvT { x, k, stride }, req)
    }

    /// One level of the per-axis orthonormal Haar transform:
    /// `[c, n...] -> [c·2^d, n/2...]`.
    pub fn dwt(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let out = dwt_forward(vx);
        let req = self.requires(x);
        self.push(out, Op::Dwt(x), req)
    }

    pub fn idwt(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let out = idwt_forward(vx);
        let req = self.requires(x);
        self.push(out, Op::Idwt(x), req)
    }

    /// Circular convolution of two single-channel maps via the FFT.
    pub fn fft_mul(&mut self, g: Var, b: Var) -> Var {
        let (vg, vb) = (&self.nodes[g.0].value, &self.nodes[b.0].value);
        assert_eq!(vg.shape, vb.shape, "fft_mul: shape mismatch");
        assert_eq!(vg.shape[0], 1, "fft_mul: single-channel maps only");
        let sp = vg.shape[1..].to_vec();
        let data = fft::circular_convolve(&sp, &vg.data, &vb.data);
        let t = Tensor { shape: vg.shape.clone(), data };
        let req = self.requires(g) || self.requires(b);
        self.push(t, Op::FftMul(g, b), req)
    }

    pub fn mean_sub(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let m = vx.data.iter().sum::<f64>() / vx.numel() as f64;
        let t = Tensor { shape: vx.shape.clone(), data: vx.data.iter().map(|v| v - m).collect() };
        let req = self.requires(x);
        self.push(t, Op::MeanSub(x), req)
    }

    /// Exact discrete Laplacian of a `[1, spatial...]` map on the tape grid.
    pub fn laplace(&mut self, x: Var) -> Var {
        let op = self.laplace.clone().expect("tape built without a grid");
        let vx = &self.nodes[x.0].value;
        assert_eq!(vx.numel(), op.grid().points(), "laplace: size mismatch");
        let mut data = vec![0.0; vx.numel()];
        op.apply_slice(&vx.data, &mut data);
        let t = Tensor { shape: vx.shape.clone(), data };
        let req = self.requires(x);
        self.push(t, Op::Laplace(x), req)
    }

    /// `Σ x²` (weight decay term).
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let t = Tensor::scalar(vx.data.iter().map(|v| v * v).sum());
        let req = self.requires(x);
        self.push(t, Op::SumSq(x), req)
    }

    /// Mean squared error between same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "mse: shape mismatch");
        let n = va.numel() as f64;
        let t = Tensor::scalar(
            va.data.iter().zip(&vb.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n,
        );
        let req = self.requires(a) || self.requires(b);
        self.push(t, Op::Mse(a, b), req)
    }

    /// Relative L2 loss `‖a − b‖₂ / ‖b‖₂`.
    pub fn rel_l2(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "rel_l2: shape mismatch");
        let diff: f64 = va.data.iter().zip(&vb.data).map(|(x, y)| (x - y) * (x - y)).sum();
        let nb: f64 = vb.data.iter().map(|y| y * y).sum();
        let t = Tensor::scalar(diff.sqrt() / nb.sqrt().max(1e-300));
        let req = self.requires(a) || self.requires(b);
        self.push(t, Op::RelL2(a, b), req)
    }

    /// Fixed-weight projection to a scalar, `Σ x·w`.
    pub fn proj(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(vx.numel(), weights.len(), "proj: weight length mismatch");
        let t = Tensor::scalar(vx.data.iter().zip(&weights).map(|(x, w)| x * w).sum());
        let req = self.requires(x);
        self.push(t, Op::Proj(x, weights), req)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(vx.numel(), shape.iter().product::<usize>(), "reshape: element count mismatch");
        let t = Tensor { shape: shape.to_vec(), data: vx.data.clone() };
        let req = self.requires(x);
        self.push(t, Op::Reshape(x), req)
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let grad = self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Reverse pass from a scalar loss; gradients land on every node with
    /// `requires` set (read them back with [`Tape::grad`]).
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward needs a scalar loss");
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires || self.nodes[i].grad.is_none() {
                continue;
            }
            let gy = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, &gy);
                    self.accumulate(b, &gy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &gy);
                    let neg: Vec<f64> = gy.iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
                Op::Scale(a, c) => {
                    let d: Vec<f64> = gy.iter().map(|v| c * v).collect();
                    self.accumulate(a, &d);
                }
                Op::AddScaled(a, b, c) => {
                    self.accumulate(a, &gy);
                    let d: Vec<f64> = gy.iter().map(|v| c * v).collect();
                    self.accumulate(b, &d);
                }
                Op::Pointwise(a, kind) => {
                    let xin = &self.nodes[a.0].value.data;
                    let yout = &self.nodes[i].value.data;
                    let d: Vec<f64> = gy
                        .iter()
                        .zip(xin.iter().zip(yout))
                        .map(|(g, (&x, &y))| g * kind.deriv(x, y))
                        .collect();
                    self.accumulate(a, &d);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a.0].value.shape[0], self.nodes[a.0].value.shape[1]);
                    let n = self.nodes[b.0].value.shape[1];
                    if self.requires(a) {
                        let da = matmul_nt(&gy, &self.nodes[b.0].value.data, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        let db = matmul_tn(&self.nodes[a.0].value.data, &gy, m, k, n);
                        self.accumulate(b, &db);
                    }
                }
                Op::BiasRow(x, bias) => {
                    self.accumulate(x, &gy);
                    if self.requires(bias) {
                        let n = self.nodes[bias.0].value.numel();
                        let mut db = vec![0.0; n];
                        for (i, g) in gy.iter().enumerate() {
                            db[i % n] += g;
                        }
                        self.accumulate(bias, &db);
                    }
                }
                Op::Conv { x, k, stride, anchor } => {
                    let gy_t = Tensor { shape: self.nodes[i].value.shape.clone(), data: gy };
                    if self.requires(x) {
                        let dx = conv_input_grad(
                            &gy_t,
                            &self.nodes[k.0].value,
                            &self.nodes[x.0].value.shape,
                            stride,
                            anchor,
                        );
                        self.accumulate(x, &dx.data);
                    }
                    if self.requires(k) {
                        let dk = conv_kernel_grad(
                            &self.nodes[x.0].value,
                            &gy_t,
                            &self.nodes[k.0].value.shape,
                            stride,
                            anchor,
                        );
                        self.accumulate(k, &dk.data);
                    }
                }
                Op::ConvT { x, k, stride } => {
                    let gy_t = Tensor { shape: self.nodes[i].value.shape.clone(), data: gy };
                    if self.requires(x) {
                        // adjoint of the adjoint: a forward strided conv
                        let dx = conv_forward(&gy_t, &self.nodes[k.0].value, stride, Anchor::Centered);
                        self.accumulate(x, &dx.data);
                    }
                    if self.requires(k) {
                        let dk = conv_kernel_grad(
                            &gy_t,
                            &self.nodes[x.0].value,
                            &self.nodes[k.0].value.shape,
                            stride,
                            Anchor::Centered,
                        );
                        self.accumulate(k, &dk.data);
                    }
                }
                Op::Dwt(x) => {
                    let gy_t = Tensor { shape: self.nodes[i].value.shape.clone(), data: gy };
                    let dx = idwt_forward(&gy_t);
                    self.accumulate(x, &dx.data);
                }
                Op::Idwt(x) => {
                    let gy_t = Tensor { shape: self.nodes[i].value.shape.clone(), data: gy };
                    let dx = dwt_forward(&gy_t);
                    self.accumulate(x, &dx.data);
                }
                Op::FftMul(g, b) => {
                    let sp = self.nodes[i].value.shape[1..].to_vec();
                    if self.requires(g) {
                        let dg = fft::circular_correlate(&sp, &gy, &self.nodes[b.0].value.data);
                        self.accumulate(g, &dg);
                    }
                    if self.requires(b) {
                        let db = fft::circular_correlate(&sp, &gy, &self.nodes[g.0].value.data);
                        self.accumulate(b, &db);
                    }
                }
                Op::MeanSub(x) => {
                    let m = gy.iter().sum::<f64>() / gy.len() as f64;
                    let d: Vec<f64> = gy.iter().map(|v| v - m).collect();
                    self.accumulate(x, &d);
                }
                Op::Laplace(x) => {
                    // the periodic Laplacian is symmetric
                    let op = self.laplace.clone().expect("tape built without a grid");
                    let mut d = vec![0.0; gy.len()];
                    op.apply_slice(&gy, &mut d);
                    self.accumulate(x, &d);
                }
                Op::SumSq(x) => {
                    let g0 = gy[0];
                    let d: Vec<f64> =
                        self.nodes[x.0].value.data.iter().map(|v| 2.0 * v * g0).collect();
                    self.accumulate(x, &d);
                }
                Op::Mse(a, b) => {
                    let g0 = gy[0];
                    let n = self.nodes[a.0].value.numel() as f64;
                    let da: Vec<f64> = self.nodes[a.0]
                        .value
                        .data
                        .iter()
                        .zip(&self.nodes[b.0].value.data)
                        .map(|(x, y)| 2.0 * (x - y) / n * g0)
                        .collect();
                    if self.requires(b) {
                        let db: Vec<f64> = da.iter().map(|v| -v).collect();
                        self.accumulate(b, &db);
                    }
                    self.accumulate(a, &da);
                }
                Op::RelL2(a, b) => {
                    let g0 = gy[0];
                    let (da, db) = {
                        let va = &self.nodes[a.0].value.data;
                        let vb = &self.nodes[b.0].value.data;
                        let diff_norm: f64 =
                            va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                        let nb: f64 = vb.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
                        if diff_norm > 0.0 {
                            let da: Vec<f64> = va
                                .iter()
                                .zip(vb)
                                .map(|(x, y)| g0 * (x - y) / (diff_norm * nb))
                                .collect();
                            let value = diff_norm / nb;
                            let db: Vec<f64> = va
                                .iter()
                                .zip(vb)
                                .map(|(x, y)| {
                                    g0 * (-(x - y) / (diff_norm * nb) - value * y / (nb * nb))
                                })
                                .collect();
                            (da, db)
                        } else {
                            (Vec::new(), Vec::new())
                        }
                    };
                    if !da.is_empty() {
                        self.accumulate(a, &da);
                        if self.requires(b) {
                            self.accumulate(b, &db);
                        }
                    }
                }
                Op::Proj(x, w) => {
                    let g0 = gy[0];
                    let d: Vec<f64> = w.iter().map(|v| v * g0).collect();
                    self.accumulate(x, &d);
                }
                Op::Reshape(x) => {
                    self.accumulate(x, &gy);
                }
            }
        }
    }
}

// ---- dense matrix kernels -------------------------------------------------

const PAR_ROWS: usize = 512;

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |ci: &mut [f64], i: usize| {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in ci.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    };
    if m >= PAR_ROWS {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c
}

/// C[m,k] = A[m,n] · B[k,n]ᵀ
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    let row = |ci: &mut [f64], i: usize| {
        let arow = &a[i * n..(i + 1) * n];
        for (kk, cv) in ci.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            *cv = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    };
    if m >= PAR_ROWS {
        c.par_chunks_mut(k).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(k).enumerate() {
            row(ci, i);
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let crow = &mut c[kk * n..(kk + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    c
}

// ---- convolution kernels --------------------------------------------------

fn kernel_radii(kshape: &[usize], anchor: Anchor) -> Vec<usize> {
    match anchor {
        Anchor::Centered => kshape.iter().map(|&k| k / 2).collect(),
        Anchor::Zero => kshape.iter().map(|_| 0).collect(),
    }
}

fn conv_forward(x: &Tensor, k: &Tensor, stride: usize, anchor: Anchor) -> Tensor {
    let (c_in, sp) = x.map_dims();
    let d = sp.len();
    assert_eq!(k.shape.len(), d + 2, "conv: kernel rank mismatch");
    assert_eq!(k.shape[1], c_in, "conv: kernel c_in mismatch");
    let c_out = k.shape[0];
    let ks = &k.shape[2..];
    let r = kernel_radii(ks, anchor);
    let out_sp: Vec<usize> = sp
        .iter()
        .map(|&n| {
            assert_eq!(n % stride, 0, "conv: spatial dim not divisible by stride");
            n / stride
        })
        .collect();
    let mut shape = vec![c_out];
    shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros(&shape);

    let in_pts: usize = sp.iter().product();
    let out_pts: usize = out_sp.iter().product();
    let k_pts: usize = ks.iter().product();
    for co in 0..c_out {
        for p in 0..out_pts {
            let pidx = unflatten(p, &out_sp);
            let mut acc = 0.0;
            for ci in 0..c_in {
                let xin = &x.data[ci * in_pts..(ci + 1) * in_pts];
                let kbase = (co * c_in + ci) * k_pts;
                for q in 0..k_pts {
                    let qidx = unflatten(q, ks);
                    let mut flat = 0;
                    for a in 0..d {
                        let n = sp[a];
                        let pos = (stride * pidx[a] + qidx[a] + n - (r[a] % n)) % n;
                        flat = flat * n + pos;
                    }
                    acc += k.data[kbase + q] * xin[flat];
                }
            }
            out.data[co * out_pts + p] = acc;
        }
    }
    out
}

fn conv_transpose_forward(x: &Tensor, k: &Tensor, stride: usize) -> Tensor {
    let (c_out, sp) = x.map_dims();
    let d = sp.len();
    assert_eq!(k.shape.len(), d + 2, "convT: kernel rank mismatch");
    assert_eq!(k.shape[0], c_out, "convT: kernel c_out mismatch");
    let c_in = k.shape[1];
    let ks = &k.shape[2..];
    let r = kernel_radii(ks, Anchor::Centered);
    let out_sp: Vec<usize> = sp.iter().map(|&n| n * stride).collect();
    let mut shape = vec![c_in];
    shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros(&shape);

    let in_pts: usize = sp.iter().product();
    let out_pts: usize = out_sp.iter().product();
    let k_pts: usize = ks.iter().product();
    for co in 0..c_out {
        let xin = &x.data[co * in_pts..(co + 1) * in_pts];
        for p in 0..in_pts {
            let pidx = unflatten(p, sp);
            let xv = xin[p];
            if xv == 0.0 {
                continue;
            }
            for ci in 0..c_in {
                let kbase = (co * c_in + ci) * k_pts;
                let oout = &mut out.data[ci * out_pts..(ci + 1) * out_pts];
                for q in 0..k_pts {
                    let qidx = unflatten(q, ks);
                    let mut flat = 0;
                    for a in 0..d {
                        let n = out_sp[a];
                        let pos = (stride * pidx[a] + qidx[a] + n - (r[a] % n)) % n;
                        flat = flat * n + pos;
                    }
                    oout[flat] += k.data[kbase + q] * xv;
                }
            }
        }
    }
    out
}

/// Gradient of `conv` w.r.t. its input: scatter `gy` back through the kernel.
fn conv_input_grad(gy: &Tensor, k: &Tensor, xshape: &[usize], stride: usize, anchor: Anchor) -> Tensor {
    let (c_out, out_sp) = gy.map_dims();
    let d = out_sp.len();
    let c_in = k.shape[1];
    let ks = &k.shape[2..];
    let r = kernel_radii(ks, anchor);
    let sp = &xshape[1..];
    let mut out = Tensor::zeros(xshape);
    let in_pts: usize = sp.iter().product();
    let out_pts: usize = out_sp.iter().product();
    let k_pts: usize = ks.iter().product();
    for co in 0..c_out {
        let gin = &gy.data[co * out_pts..(co + 1) * out_pts];
        for p in 0..out_pts {
            let pidx = unflatten(p, out_sp);
            let gv = gin[p];
            if gv == 0.0 {
                continue;
            }
            for ci in 0..c_in {
                let kbase = (co * c_in + ci) * k_pts;
                let oout = &mut out.data[ci * in_pts..(ci + 1) * in_pts];
                for q in 0..k_pts {
                    let qidx = unflatten(q, ks);
                    let mut flat = 0;
                    for a in 0..d {
                        let n = sp[a];
                        let pos = (stride * pidx[a] + qidx[a] + n - (r[a] % n)) % n;
                        flat = flat * n + pos;
                    }
                    oout[flat] += k.data[kbase + q] * gv;
                }
            }
        }
    }
    out
}

/// Gradient of `conv` w.r.t. the kernel: correlate input with `gy`.
fn conv_kernel_grad(x: &Tensor, gy: &Tensor, kshape: &[usize], stride: usize, anchor: Anchor) -> Tensor {
    let (_c_in, sp) = x.map_dims();
    let (c_out, out_sp) = gy.map_dims();
    let d = sp.len();
    let c_in = kshape[1];
    let ks = &kshape[2..];
    let r = kernel_radii(ks, anchor);
    let mut out = Tensor::zeros(kshape);
    let in_pts: usize = sp.iter().product();
    let out_pts: usize = out_sp.iter().product();
    let k_pts: usize = ks.iter().product();
    for co in 0..c_out {
        let gin = &gy.data[co * out_pts..(co + 1) * out_pts];
        for ci in 0..c_in {
            let xin = &x.data[ci * in_pts..(ci + 1) * in_pts];
            let kbase = (co * c_in + ci) * k_pts;
            for q in 0..k_pts {
                let qidx = unflatten(q, ks);
                let mut acc = 0.0;
                for p in 0..out_pts {
                    let pidx = unflatten(p, out_sp);
                    let mut flat = 0;
                    for a in 0..d {
                        let n = sp[a];
                        let pos = (stride * pidx[a] + qidx[a] + n - (r[a] % n)) % n;
                        flat = flat * n + pos;
                    }
                    acc += gin[p] * xin[flat];
                }
                out.data[kbase + q] = acc;
            }
        }
    }
    out
}

fn unflatten(mut flat: usize, dims: &[usize]) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for a in (0..dims.len()).rev() {
        idx[a] = flat % dims[a];
        flat /= dims[a];
    }
    idx
}

// ---- orthonormal Haar transform -------------------------------------------

/// `[c, n...] -> [c·2^d, n/2...]`; output channel `c·2^d + band` where the
/// bits of `band` select low (0) or high (1) per axis, most-significant bit
/// for axis 0.
pub fn dwt_forward(x: &Tensor) -> Tensor {
    let (c, sp) = x.map_dims();
    let d = sp.len();
    for &n in sp {
        assert!(n % 2 == 0, "dwt: odd spatial dim");
    }
    let out_sp: Vec<usize> = sp.iter().map(|&n| n / 2).collect();
    let bands = 1usize << d;
    let mut shape = vec![c * bands];
    shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros(&shape);
    let in_pts: usize = sp.iter().product();
    let out_pts: usize = out_sp.iter().product();
    let norm = 1.0 / (bands as f64).sqrt();
    for ch in 0..c {
        let xin = &x.data[ch * in_pts..(ch + 1) * in_pts];
        for band in 0..bands {
            let obase = (ch * bands + band) * out_pts;
            for p in 0..out_pts {
                let pidx = unflatten(p, &out_sp);
                let mut acc = 0.0;
                for corner in 0..bands {
                    let mut flat = 0;
                    let mut sign = 1.0;
                    for a in 0..d {
                        let bit = (corner >> (d - 1 - a)) & 1;
                        let hi = (band >> (d - 1 - a)) & 1;
                        if hi == 1 && bit == 1 {
                            sign = -sign;
                        }
                        flat = flat * sp[a] + 2 * pidx[a] + bit;
                    }
                    acc += sign * xin[flat];
                }
                out.data[obase + p] = norm * acc;
            }
        }
    }
    out
}

/// Exact inverse of [`dwt_forward`] (the transform is orthonormal).
pub fn idwt_forward(x: &Tensor) -> Tensor {
    let (cb, sp) = x.map_dims();
    let d = sp.len();
    let bands = 1usize << d;
    assert_eq!(cb % bands, 0, "idwt: channels not divisible by 2^d");
    let c = cb / bands;
    let out_sp: Vec<usize> = sp.iter().map(|&n| n * 2).collect();
    let mut shape = vec![c];
    shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros(&shape);
    let in_pts: usize = sp.iter().product();
    let out_pts: usize = out_sp.iter().product();
    let norm = 1.0 / (bands as f64).sqrt();
    for ch in 0..c {
        for p in 0..in_pts {
            let pidx = unflatten(p, sp);
            for corner in 0..bands {
                let mut flat = 0;
                for a in 0..d {
                    let bit = (corner >> (d - 1 - a)) & 1;
                    flat = flat * out_sp[a] + 2 * pidx[a] + bit;
                }
                let mut acc = 0.0;
                for band in 0..bands {
                    let mut sign = 1.0;
                    for a in 0..d {
                        let bit = (corner >> (d - 1 - a)) & 1;
                        let hi = (band >> (d - 1 - a)) & 1;
                        if hi == 1 && bit == 1 {
                            sign = -sign;
                        }
                    }
                    acc += sign * x.data[(ch * bands + band) * in_pts + p];
                }
                out.data[ch * out_pts + flat] = norm * acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::stream(seed, &[77]);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
    }

    /// Finite-difference check of d(proj(f(x)))/dx for every input entry.
    fn gradcheck(
        shapes: &[&[usize]],
        f: impl Fn(&mut Tape, &[Var]) -> Var,
        grid: Option<&Grid>,
        seed: u64,
    ) {
        let inputs: Vec<Tensor> =
            shapes.iter().enumerate().map(|(i, s)| rand_tensor(s, seed + i as u64)).collect();
        let build = |tensors: &[Tensor]| -> (Tape, Vec<Var>, Var) {
            let mut tape = match grid {
                Some(g) => Tape::with_grid(g),
                None => Tape::new(),
            };
            let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let out = f(&mut tape, &vars);
            (tape, vars, out)
        };
        let (mut tape, vars, out) = build(&inputs);
        let proj_w: Vec<f64> = {
            let mut rng = crate::rng::stream(seed, &[123]);
            (0..tape.value(out).numel()).map(|_| rng.gen::<f64>() - 0.5).collect()
        };
        let loss = tape.proj(out, proj_w.clone());
        tape.backward(loss);
        let analytic: Vec<Vec<f64>> =
            vars.iter().map(|v| tape.grad(*v).expect("missing grad").to_vec()).collect();

        let eps = 1e-5;
        for (ti, tensor) in inputs.iter().enumerate() {
            let mut fd = vec![0.0; tensor.numel()];
            for e in 0..tensor.numel() {
                let mut plus = inputs.clone();
                plus[ti].data[e] += eps;
                let (mut tp, _, op) = build(&plus);
                let lp = tp.proj(op, proj_w.clone());
                let mut minus = inputs.clone();
                minus[ti].data[e] -= eps;
                let (mut tm, _, om) = build(&minus);
                let lm = tm.proj(om, proj_w.clone());
                fd[e] = (tp.value(lp).data[0] - tm.value(lm).data[0]) / (2.0 * eps);
            }
            let num: f64 = analytic[ti]
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den <= 1e-6, "input {ti}: fd mismatch {:e}", num / den);
        }
    }

    #[test]
    fn grad_add_sub_scale() {
        gradcheck(&[&[2, 3, 3], &[2, 3, 3]], |t, v| t.add(v[0], v[1]), None, 1);
        gradcheck(&[&[2, 3, 3], &[2, 3, 3]], |t, v| t.sub(v[0], v[1]), None, 2);
        gradcheck(&[&[1, 8]], |t, v| t.scale(v[0], -2.25), None, 3);
        gradcheck(&[&[1, 8], &[1, 8]], |t, v| t.add_scaled(v[0], v[1], 0.37), None, 4);
    }

    #[test]
    fn grad_pointwise() {
        gradcheck(&[&[1, 8, 8]], |t, v| t.pointwise(v[0], Nonlin::Sin), None, 5);
        gradcheck(&[&[1, 8, 8]], |t, v| t.pointwise(v[0], Nonlin::Tanh), None, 6);
    }

    #[test]
    fn grad_matmul_bias() {
        gradcheck(&[&[5, 4], &[4, 3]], |t, v| t.matmul(v[0], v[1]), None, 7);
        gradcheck(&[&[5, 4], &[4]], |t, v| t.bias_row(v[0], v[1]), None, 8);
    }

    #[test]
    fn grad_conv2d() {
        gradcheck(&[&[2, 8, 8], &[3, 2, 3, 3]], |t, v| t.conv(v[0], v[1], 1, Anchor::Centered), None, 9);
        gradcheck(&[&[1, 8, 8], &[2, 1, 3, 3]], |t, v| t.conv(v[0], v[1], 2, Anchor::Centered), None, 10);
        gradcheck(&[&[1, 6, 6], &[1, 1, 6, 6]], |t, v| t.conv(v[0], v[1], 1, Anchor::Zero), None, 11);
    }

    #[test]
    fn grad_conv3d() {
        gradcheck(&[&[1, 4, 4, 4], &[2, 1, 3, 3, 3]], |t, v| t.conv(v[0], v[1], 1, Anchor::Centered), None, 12);
    }

    #[test]
    fn grad_conv_transpose() {
        gradcheck(&[&[2, 4, 4], &[2, 1, 3, 3]], |t, v| t.conv_transpose(v[0], v[1], 2), None, 13);
        gradcheck(&[&[1, 4, 4, 4], &[1, 1, 3, 3, 3]], |t, v| t.conv_transpose(v[0], v[1], 2), None, 14);
    }

    #[test]
    fn grad_dwt_idwt() {
        gradcheck(&[&[1, 8, 8]], |t, v| t.dwt(v[0]), None, 15);
        gradcheck(&[&[4, 4, 4]], |t, v| t.idwt(v[0]), None, 16);
        gradcheck(&[&[1, 4, 4, 4]], |t, v| t.dwt(v[0]), None, 17);
    }

    #[test]
    fn grad_fft_mul() {
        gradcheck(&[&[1, 8, 8], &[1, 8, 8]], |t, v| t.fft_mul(v[0], v[1]), None, 18);
    }

    #[test]
    fn grad_mean_sub_losses() {
        gradcheck(&[&[1, 8, 8]], |t, v| t.mean_sub(v[0]), None, 19);
        gradcheck(&[&[1, 16]], |t, v| t.sum_sq(v[0]), None, 20);
        gradcheck(&[&[1, 12], &[1, 12]], |t, v| t.mse(v[0], v[1]), None, 21);
        gradcheck(&[&[1, 12], &[1, 12]], |t, v| t.rel_l2(v[0], v[1]), None, 22);
    }

    #[test]
    fn grad_laplace() {
        let g = Grid::periodic(&[8, 8]);
        gradcheck(&[&[1, 8, 8]], |t, v| t.laplace(v[0]), Some(&g), 23);
    }

    #[test]
    fn grad_composite_chain() {
        // a small net: conv → tanh → conv → dwt → idwt → mean_sub
        gradcheck(
            &[&[1, 8, 8], &[2, 1, 3, 3], &[2, 2, 3, 3]],
            |t, v| {
                let c1 = t.conv(v[0], v[1], 1, Anchor::Centered);
                let a1 = t.pointwise(c1, Nonlin::Tanh);
                let c2 = t.conv(a1, v[2], 1, Anchor::Centered);
                let w = t.dwt(c2);
                let back = t.idwt(w);
                t.mean_sub(back)
            },
            None,
            24,
        );
    }

    #[test]
    fn haar_is_orthonormal_and_invertible() {
        for shape in [vec![1usize, 8, 8], vec![2, 4, 6], vec![1, 4, 4, 4]] {
            let x = rand_tensor(&shape, 31);
            let w = dwt_forward(&x);
            let nx: f64 = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nw: f64 = w.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((nx - nw).abs() <= 1e-12 * nx, "Parseval violated");
            let back = idwt_forward(&w);
            assert_eq!(back.shape, x.shape);
            for (a, b) in back.data.iter().zip(&x.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let x = rand_tensor(&[1, 8, 8], 40);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data[4] = 1.0; // center tap
        let y = conv_forward(&x, &k, 1, Anchor::Centered);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn fft_mul_matches_brute_force() {
        let a = rand_tensor(&[1, 8, 8], 50);
        let b = rand_tensor(&[1, 8, 8], 51);
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone(), false);
        let vb = tape.leaf(b.clone(), false);
        let y = tape.fft_mul(va, vb);
        for i in 0..8usize {
            for j in 0..8usize {
                let mut acc = 0.0;
                for p in 0..8usize {
                    for q in 0..8usize {
                        acc += a.data[p * 8 + q] * b.data[((i + 8 - p) % 8) * 8 + ((j + 8 - q) % 8)];
                    }
                }
                assert!((tape.value(y).data[i * 8 + j] - acc).abs() < 1e-12);
            }
        }
    }
}
