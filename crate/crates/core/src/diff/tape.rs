//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] records every operation of a forward pass in creation order,
//! which is also a valid topological order for the backward sweep. Gradients
//! accumulate additively at fan-out. Evaluation is strictly sequential with a
//! fixed reduction order, so two runs of the same graph on the same inputs
//! produce bit-identical values and gradients.
//!
//! One tape is single-threaded. Concurrent evaluation happens by giving each
//! thread its own tape over shared immutable parameter values.

use super::conv::{col2im, conv_out_dim, im2col, matmul_a_bt, matmul_at_b, matmul_plain};
use super::tensor::Tensor;
use crate::error::{CwmError, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a tape. Only meaningful for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// y = scale * x + offset, elementwise.
    Affine { x: Var, scale: f64 },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// a[m,k] * b[k,n].
    Matmul { a: Var, b: Var },
    /// Broadcast-add a bias row over every row of a matrix.
    AddRow { x: Var, bias: Var },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Softplus { x: Var },
    /// Row-wise normalization of a matrix with learned per-column affine.
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape { x: Var },
    /// [B, C, P] -> [B, P, C].
    BatchTranspose { x: Var },
    /// Select rows of a matrix by index (duplicates allowed).
    GatherRows { x: Var, idx: Vec<usize> },
    /// Sum rows of a matrix into groups; `groups[r]` names the output row.
    SumGroups { x: Var, groups: Vec<usize> },
    /// Sum over the columns of a matrix, yielding one value per row.
    RowSum { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    /// Row-wise squared Euclidean distance between two equal-shape matrices.
    SqDistRows { a: Var, b: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a value as a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, op: Op, value: Tensor, ctx: &str) -> Result<Var> {
        value.check_finite(ctx)?;
        Ok(self.push(op, value))
    }

    fn binary_same_shape(&self, a: Var, b: Var, ctx: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CwmError::Graph(format!(
                "{ctx}: shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    // ---- elementwise ----

    /// y = scale * x + offset.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| scale * v + offset)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.checked(Op::Affine { x, scale }, value, "affine")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.checked(Op::Add { a, b }, value, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.checked(Op::Sub { a, b }, value, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.checked(Op::Mul { a, b }, value, "mul")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.checked(Op::Relu { x }, value, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.checked(Op::LeakyRelu { x, slope }, value, "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.checked(Op::Sigmoid { x }, value, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.checked(Op::Tanh { x }, value, "tanh")
    }

    /// Numerically stable log(1 + exp(x)).
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        self.checked(Op::Softplus { x }, value, "softplus")
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (asym, bsym) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if asym.len() != 2 || bsym.len() != 2 || asym[1] != bsym[0] {
            return Err(CwmError::Graph(format!(
                "matmul: incompatible shapes {asym:?} x {bsym:?}"
            )));
        }
        let (m, k, n) = (asym[0], asym[1], bsym[1]);
        let mut out = vec![0.0; m * n];
        matmul_plain(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.checked(Op::Matmul { a, b }, value, "matmul")
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(CwmError::Graph(format!(
                "add_row: shapes {xs:?} + {bs:?}"
            )));
        }
        let (r, c) = (xs[0], xs[1]);
        let mut data = self.value(x).data().to_vec();
        let b = self.value(bias).data().to_vec();
        for row in 0..r {
            for col in 0..c {
                data[row * c + col] += b[col];
            }
        }
        let value = Tensor::new(xs, data)?;
        self.checked(Op::AddRow { x, bias }, value, "add_row")
    }

    /// 2D convolution over a batch: x[B,C,H,W], w[O,C,k,k], b[O].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize)
        -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(CwmError::Graph(format!(
                "conv2d: ranks {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        let (batch, c_in, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wc != c_in || kh != kw || bs[0] != c_out {
            return Err(CwmError::Graph(format!(
                "conv2d: incompatible {xs:?} with {ws:?} / {bs:?}"
            )));
        }
        if stride == 0 || h + 2 * padding < kh || wdt + 2 * padding < kw {
            return Err(CwmError::Graph("conv2d: kernel larger than padded input".into()));
        }
        let oh = conv_out_dim(h, kh, stride, padding);
        let ow = conv_out_dim(wdt, kw, stride, padding);
        let patch = oh * ow;
        let ckk = c_in * kh * kw;

        let mut out = vec![0.0; batch * c_out * patch];
        let mut cols = vec![0.0; ckk * patch];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        for img in 0..batch {
            im2col(
                &xv[img * c_in * h * wdt..(img + 1) * c_in * h * wdt],
                c_in, h, wdt, kh, stride, padding, &mut cols,
            );
            let dst = &mut out[img * c_out * patch..(img + 1) * c_out * patch];
            matmul_plain(c_out, ckk, patch, wv, &cols, dst);
            for o in 0..c_out {
                let bias = bv[o];
                for v in &mut dst[o * patch..(o + 1) * patch] {
                    *v += bias;
                }
            }
        }
        let value = Tensor::new(vec![batch, c_out, oh, ow], out)?;
        self.checked(Op::Conv2d { x, w, b, stride, padding }, value, "conv2d")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let gs = self.value(gamma).shape().to_vec();
        if xs.len() != 2 || gs.len() != 1 || gs[0] != xs[1] || self.value(beta).shape() != &gs[..]
        {
            return Err(CwmError::Graph(format!(
                "layer_norm: shapes x{xs:?} gamma{gs:?}"
            )));
        }
        let (r, c) = (xs[0], xs[1]);
        let mut data = vec![0.0; r * c];
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        for row in 0..r {
            let src = &xv[row * c..(row + 1) * c];
            let mean = src.iter().sum::<f64>() / c as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let dst = &mut data[row * c..(row + 1) * c];
            for col in 0..c {
                dst[col] = (src[col] - mean) * istd * gv[col] + bv[col];
            }
        }
        let value = Tensor::new(xs, data)?;
        self.checked(Op::LayerNorm { x, gamma, beta }, value, "layer_norm")
    }

    // ---- structure ----

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(CwmError::Graph("concat: empty part list".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(CwmError::Graph(format!(
                "concat: axis {axis} out of range for {first:?}"
            )));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(CwmError::Graph(format!(
                    "concat: incompatible shapes {first:?} vs {s:?}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let pa = self.value(p).shape()[axis];
            let pv = self.value(p).data();
            for o in 0..outer {
                let src = &pv[o * pa * inner..(o + 1) * pa * inner];
                let dst_start = (o * axis_total + offset) * inner;
                data[dst_start..dst_start + pa * inner].copy_from_slice(src);
            }
            offset += pa;
        }
        let value = Tensor::new(out_shape, data)?;
        self.checked(Op::Concat { parts: parts.to_vec(), axis }, value, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape).map_err(|_| {
            CwmError::Graph(format!(
                "reshape: {:?} -> {shape:?}",
                self.value(x).shape()
            ))
        })?;
        Ok(self.push(Op::Reshape { x }, value))
    }

    /// Swap the last two axes of a rank-3 tensor.
    pub fn batch_transpose(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(CwmError::Graph(format!(
                "batch_transpose: rank-3 input required, got {xs:?}"
            )));
        }
        let (b, c, p) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).data();
        let mut data = vec![0.0; b * c * p];
        for bi in 0..b {
            let src = &xv[bi * c * p..(bi + 1) * c * p];
            let dst = &mut data[bi * c * p..(bi + 1) * c * p];
            for ci in 0..c {
                for pi in 0..p {
                    dst[pi * c + ci] = src[ci * p + pi];
                }
            }
        }
        let value = Tensor::new(vec![b, p, c], data)?;
        Ok(self.push(Op::BatchTranspose { x }, value))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(CwmError::Graph("gather_rows: rank-2 input required".into()));
        }
        let (r, c) = (xs[0], xs[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(CwmError::Graph(format!(
                "gather_rows: index {bad} out of {r} rows"
            )));
        }
        let xv = self.value(x).data();
        let mut data = vec![0.0; idx.len() * c];
        for (out_row, &src_row) in idx.iter().enumerate() {
            data[out_row * c..(out_row + 1) * c]
                .copy_from_slice(&xv[src_row * c..(src_row + 1) * c]);
        }
        let value = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(Op::GatherRows { x, idx: idx.to_vec() }, value))
    }

    pub fn sum_groups(&mut self, x: Var, groups: &[usize], n_groups: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || groups.len() != xs[0] {
            return Err(CwmError::Graph(format!(
                "sum_groups: {} group labels for {:?}",
                groups.len(),
                xs
            )));
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= n_groups) {
            return Err(CwmError::Graph(format!(
                "sum_groups: group {bad} out of {n_groups}"
            )));
        }
        let c = xs[1];
        let xv = self.value(x).data();
        let mut data = vec![0.0; n_groups * c];
        for (row, &g) in groups.iter().enumerate() {
            let src = &xv[row * c..(row + 1) * c];
            let dst = &mut data[g * c..(g + 1) * c];
            for col in 0..c {
                dst[col] += src[col];
            }
        }
        let value = Tensor::new(vec![n_groups, c], data)?;
        self.checked(
            Op::SumGroups { x, groups: groups.to_vec() },
            value,
            "sum_groups",
        )
    }

    // ---- reductions ----

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(CwmError::Graph("row_sum: rank-2 input required".into()));
        }
        let (r, c) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let data: Vec<f64> = (0..r)
            .map(|row| xv[row * c..(row + 1) * c].iter().sum())
            .collect();
        let value = Tensor::new(vec![r], data)?;
        self.checked(Op::RowSum { x }, value, "row_sum")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let value = Tensor::scalar(s);
        self.checked(Op::SumAll { x }, value, "sum_all")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(CwmError::Graph("mean_all: empty tensor".into()));
        }
        let n = self.value(x).len() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let value = Tensor::scalar(s / n);
        self.checked(Op::MeanAll { x }, value, "mean_all")
    }

    pub fn sq_dist_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sq_dist_rows")?;
        let xs = self.value(a).shape().to_vec();
        if xs.len() != 2 {
            return Err(CwmError::Graph("sq_dist_rows: rank-2 inputs required".into()));
        }
        let (r, c) = (xs[0], xs[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<f64> = (0..r)
            .map(|row| {
                av[row * c..(row + 1) * c]
                    .iter()
                    .zip(&bv[row * c..(row + 1) * c])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect();
        let value = Tensor::new(vec![r], data)?;
        self.checked(Op::SqDistRows { a, b }, value, "sq_dist_rows")
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Returns one gradient per node that
    /// participates in the computation of `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(CwmError::Graph("backward: root must be scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);

        for i in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(i, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(t) = g {
                t.check_finite(&format!("gradient of node {i}"))?;
            }
        }
        Ok(Gradients { grads })
    }

    #[allow(clippy::needless_range_loop)]
    fn propagate(&self, node: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let accum = |grads: &mut [Option<Tensor>], v: Var, update: &dyn Fn(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
            update(slot.data_mut());
        };
        let g = gout.data();

        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Affine { x, scale } => {
                let s = *scale;
                accum(grads, *x, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d += s * go;
                    }
                });
            }
            Op::Add { a, b } => {
                accum(grads, *a, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d += go;
                    }
                });
                accum(grads, *b, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d += go;
                    }
                });
            }
            Op::Sub { a, b } => {
                accum(grads, *a, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d += go;
                    }
                });
                accum(grads, *b, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d -= go;
                    }
                });
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                accum(grads, *a, &|dx| {
                    for ((d, go), y) in dx.iter_mut().zip(g).zip(bv) {
                        *d += go * y;
                    }
                });
                accum(grads, *b, &|dx| {
                    for ((d, go), x) in dx.iter_mut().zip(g).zip(av) {
                        *d += go * x;
                    }
                });
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                accum(grads, *a, &|dx| {
                    matmul_a_bt(m, n, k, g, bv, dx);
                });
                accum(grads, *b, &|dx| {
                    matmul_at_b(m, k, n, av, g, dx);
                });
            }
            Op::AddRow { x, bias } => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                accum(grads, *x, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d += go;
                    }
                });
                accum(grads, *bias, &|db| {
                    for row in 0..r {
                        for col in 0..c {
                            db[col] += g[row * c + col];
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, padding } => {
                self.conv2d_backward(*x, *w, *b, *stride, *padding, g, grads)?;
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                accum(grads, *x, &|dx| {
                    for ((d, go), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += go;
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let s = *slope;
                accum(grads, *x, &|dx| {
                    for ((d, go), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += go * if v >= 0.0 { 1.0 } else { s };
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = self.nodes[node].value.data();
                accum(grads, *x, &|dx| {
                    for ((d, go), &y) in dx.iter_mut().zip(g).zip(yv) {
                        *d += go * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = self.nodes[node].value.data();
                accum(grads, *x, &|dx| {
                    for ((d, go), &y) in dx.iter_mut().zip(g).zip(yv) {
                        *d += go * (1.0 - y * y);
                    }
                });
            }
            Op::Softplus { x } => {
                let xv = self.value(*x).data();
                accum(grads, *x, &|dx| {
                    for ((d, go), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += go * sigmoid(v);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta } => {
                self.layer_norm_backward(*x, *gamma, *beta, g, grads);
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[node].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0usize;
                for &p in parts {
                    let pa = self.value(p).shape()[*axis];
                    accum(grads, p, &|dx| {
                        for o in 0..outer {
                            let src_start = (o * axis_total + offset) * inner;
                            let dst = &mut dx[o * pa * inner..(o + 1) * pa * inner];
                            for (d, go) in dst.iter_mut().zip(&g[src_start..src_start + pa * inner])
                            {
                                *d += go;
                            }
                        }
                    });
                    offset += pa;
                }
            }
            Op::Reshape { x } => {
                accum(grads, *x, &|dx| {
                    for (d, go) in dx.iter_mut().zip(g) {
                        *d += go;
                    }
                });
            }
            Op::BatchTranspose { x } => {
                let xs = self.value(*x).shape();
                let (b, c, p) = (xs[0], xs[1], xs[2]);
                accum(grads, *x, &|dx| {
                    for bi in 0..b {
                        let gsrc = &g[bi * c * p..(bi + 1) * c * p];
                        let dst = &mut dx[bi * c * p..(bi + 1) * c * p];
                        for ci in 0..c {
                            for pi in 0..p {
                                dst[ci * p + pi] += gsrc[pi * c + ci];
                            }
                        }
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let c = self.value(*x).cols();
                accum(grads, *x, &|dx| {
                    for (out_row, &src_row) in idx.iter().enumerate() {
                        let dst = &mut dx[src_row * c..(src_row + 1) * c];
                        for (d, go) in dst.iter_mut().zip(&g[out_row * c..(out_row + 1) * c]) {
                            *d += go;
                        }
                    }
                });
            }
            Op::SumGroups { x, groups } => {
                let c = self.value(*x).cols();
                accum(grads, *x, &|dx| {
                    for (row, &grp) in groups.iter().enumerate() {
                        let dst = &mut dx[row * c..(row + 1) * c];
                        for (d, go) in dst.iter_mut().zip(&g[grp * c..(grp + 1) * c]) {
                            *d += go;
                        }
                    }
                });
            }
            Op::RowSum { x } => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                accum(grads, *x, &|dx| {
                    for row in 0..r {
                        let go = g[row];
                        for d in &mut dx[row * c..(row + 1) * c] {
                            *d += go;
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let go = g[0];
                accum(grads, *x, &|dx| {
                    for d in dx.iter_mut() {
                        *d += go;
                    }
                });
            }
            Op::MeanAll { x } => {
                let go = g[0] / self.value(*x).len() as f64;
                accum(grads, *x, &|dx| {
                    for d in dx.iter_mut() {
                        *d += go;
                    }
                });
            }
            Op::SqDistRows { a, b } => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                accum(grads, *a, &|dx| {
                    for row in 0..r {
                        let go = g[row];
                        for col in 0..c {
                            let k = row * c + col;
                            dx[k] += go * 2.0 * (av[k] - bv[k]);
                        }
                    }
                });
                accum(grads, *b, &|dx| {
                    for row in 0..r {
                        let go = g[row];
                        for col in 0..c {
                            let k = row * c + col;
                            dx[k] -= go * 2.0 * (av[k] - bv[k]);
                        }
                    }
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        gout: &[f64],
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let (batch, c_in, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, _, kh, _) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = conv_out_dim(h, kh, stride, padding);
        let ow = conv_out_dim(wdt, kh, stride, padding);
        let patch = oh * ow;
        let ckk = c_in * kh * kh;

        let xv = self.value(x).data();
        let wv = self.value(w).data();

        let mut dx = grads[var_index(x)]
            .take()
            .unwrap_or_else(|| Tensor::zeros(xs));
        let mut dw = grads[var_index(w)]
            .take()
            .unwrap_or_else(|| Tensor::zeros(ws));
        let mut db = grads[var_index(b)]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.value(b).shape()));

        let mut cols = vec![0.0; ckk * patch];
        let mut dcols = vec![0.0; ckk * patch];
        for img in 0..batch {
            let gimg = &gout[img * c_out * patch..(img + 1) * c_out * patch];

            for o in 0..c_out {
                db.data_mut()[o] += gimg[o * patch..(o + 1) * patch].iter().sum::<f64>();
            }

            im2col(
                &xv[img * c_in * h * wdt..(img + 1) * c_in * h * wdt],
                c_in, h, wdt, kh, stride, padding, &mut cols,
            );
            // dW += gimg[c_out, patch] * cols^T[patch, ckk]
            matmul_a_bt(c_out, patch, ckk, gimg, &cols, dw.data_mut());

            // dcols = W^T[ckk, c_out] * gimg[c_out, patch]
            dcols.fill(0.0);
            matmul_at_b(c_out, ckk, patch, wv, gimg, &mut dcols);
            col2im(
                &dcols,
                c_in, h, wdt, kh, stride, padding,
                &mut dx.data_mut()[img * c_in * h * wdt..(img + 1) * c_in * h * wdt],
            );
        }

        grads[var_index(x)] = Some(dx);
        grads[var_index(w)] = Some(dw);
        grads[var_index(b)] = Some(db);
        Ok(())
    }

    fn layer_norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        gout: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();

        let mut dx = grads[var_index(x)]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.value(x).shape()));
        let mut dgamma = grads[var_index(gamma)]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.value(gamma).shape()));
        let mut dbeta = grads[var_index(beta)]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.value(beta).shape()));

        let cf = c as f64;
        for row in 0..r {
            let src = &xv[row * c..(row + 1) * c];
            let go = &gout[row * c..(row + 1) * c];
            let mean = src.iter().sum::<f64>() / cf;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cf;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();

            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for col in 0..c {
                let xhat = (src[col] - mean) * istd;
                let dxhat = go[col] * gv[col];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
                dgamma.data_mut()[col] += go[col] * xhat;
                dbeta.data_mut()[col] += go[col];
            }
            mean_dxhat /= cf;
            mean_dxhat_xhat /= cf;

            let dst = &mut dx.data_mut()[row * c..(row + 1) * c];
            for col in 0..c {
                let xhat = (src[col] - mean) * istd;
                let dxhat = go[col] * gv[col];
                dst[col] += istd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
            }
        }

        grads[var_index(x)] = Some(dx);
        grads[var_index(gamma)] = Some(dgamma);
        grads[var_index(beta)] = Some(dbeta);
    }
}

fn var_index(v: Var) -> usize {
    v.0
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
