//! Reverse-mode tape over dense tensors.
//!
//! One tape records one forward pass. Operations push nodes in topological
//! order; `backward` walks the tape once in reverse and accumulates
//! gradients for every leaf that requires them. A tape can be consumed by
//! `backward` exactly once.

use super::exact::{fsum, ExactAcc};
use super::tensor::Tensor;
use super::NumGradError;

/// Handle to a value on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Add(Var, Var),
    /// Broadcast a length-n vector over every row of an (m, n) matrix.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Multiply by a compile-time constant.
    Scale(Var, f64),
    AddScalar(Var),
    /// Multiply elementwise by a scalar tape value.
    ScaleBy(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSums(Var),
    ColSums(Var),
    RowMeans(Var),
    ColMeans(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    /// Per-row layer normalization with learned gain/bias.
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, addressed by tape handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable softmax of one strided slice; -inf entries map to exactly 0.
/// The denominator is summed exactly, so the result is invariant under
/// permutations of the slice.
fn softmax_slice(src: &[f64], idx: impl Iterator<Item = usize> + Clone, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for i in idx.clone() {
        if src[i] > max {
            max = src[i];
        }
    }
    let mut sum = ExactAcc::new();
    let mut tmp = Vec::with_capacity(out.len());
    for i in idx {
        let e = (src[i] - max).exp();
        tmp.push(e);
        sum.add(e);
    }
    let sum = sum.sum();
    for (o, e) in out.iter_mut().zip(tmp) {
        *o = e / sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let requires = t.requires_grad();
        self.push(t.clone(), Op::Leaf, requires)
    }

    /// Record a non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert!(self.nodes[v.0].value.is_scalar());
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape_err(&self, op: &str, vs: &[Var]) -> NumGradError {
        let shapes: Vec<String> = vs
            .iter()
            .map(|v| format!("{:?}", self.value(*v).shape()))
            .collect();
        NumGradError::ShapeMismatch {
            op: op.to_string(),
            shapes: shapes.join(" vs "),
        }
    }

    // ── Elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumGradError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", &[a, b]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let req = self.requires(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), req))
    }

    /// `a` is (m, n); `row` is a length-n vector added to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumGradError> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if self.value(row).shape() != [n] {
            return Err(self.shape_err("add_row", &[a, row]));
        }
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for c in 0..n {
                data.push(av[r * n + c] + rv[c]);
            }
        }
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let req = self.requires(&[a, row]);
        Ok(self.push(t, Op::AddRow(a, row), req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumGradError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("sub", &[a, b]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let req = self.requires(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumGradError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mul", &[a, b]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let req = self.requires(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), req))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("scale keeps shape");
        let req = self.requires(&[a]);
        self.push(t, Op::Scale(a, c), req)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("add_scalar keeps shape");
        let req = self.requires(&[a]);
        self.push(t, Op::AddScalar(a), req)
    }

    /// Multiply every element of `a` by the scalar tape value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumGradError> {
        if !self.value(s).is_scalar() {
            return Err(self.shape_err("scale_by", &[a, s]));
        }
        let sv = self.value(s).data()[0];
        let data = self.value(a).data().iter().map(|x| x * sv).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let req = self.requires(&[a, s]);
        Ok(self.push(t, Op::ScaleBy(a, s), req))
    }

    // ── Activations ─────────────────────────────────────────────────

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, stable_softplus, Op::Softplus(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("unary keeps shape");
        let req = self.requires(&[a]);
        self.push(t, op, req)
    }

    // ── Softmax ─────────────────────────────────────────────────────

    /// Softmax within each row. A 1-D input is treated as one row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let mut row = vec![0.0; n];
            softmax_slice(src, (0..n).map(|c| r * n + c), &mut row);
            data[r * n..(r + 1) * n].copy_from_slice(&row);
        }
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("softmax keeps shape");
        let req = self.requires(&[a]);
        self.push(t, Op::SoftmaxRows(a), req)
    }

    /// Softmax within each column of a matrix.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for c in 0..n {
            let mut col = vec![0.0; m];
            softmax_slice(src, (0..m).map(|r| r * n + c), &mut col);
            for r in 0..m {
                data[r * n + c] = col[r];
            }
        }
        let t = Tensor::from_vec(self.value(a).shape(), data).expect("softmax keeps shape");
        let req = self.requires(&[a]);
        self.push(t, Op::SoftmaxCols(a), req)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumGradError> {
        let (am, ak) = (self.value(a).rows(), self.value(a).cols());
        let (bk, bn) = (self.value(b).rows(), self.value(b).cols());
        if self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 || ak != bk {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), am, ak, bn);
        let t = Tensor::from_vec(&[am, bn], data)?;
        let req = self.requires(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), req))
    }

    /// `matmul` with exactly rounded inner sums. Use when the contracted
    /// axis enumerates a *set* (e.g. attention over tokens): the product is
    /// then bitwise independent of element order. Several times slower than
    /// `matmul`, so plain feature-axis contractions should not pay for it.
    pub fn matmul_exact(&mut self, a: Var, b: Var) -> Result<Var, NumGradError> {
        let (am, ak) = (self.value(a).rows(), self.value(a).cols());
        let (bk, bn) = (self.value(b).rows(), self.value(b).cols());
        if self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 || ak != bk {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let data = matmul_exact_raw(self.value(a).data(), self.value(b).data(), am, ak, bn);
        let t = Tensor::from_vec(&[am, bn], data)?;
        let req = self.requires(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), req))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumGradError> {
        if self.value(a).shape().len() != 2 {
            return Err(self.shape_err("transpose", &[a]));
        }
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = src[r * n + c];
            }
        }
        let t = Tensor::from_vec(&[n, m], data)?;
        let req = self.requires(&[a]);
        Ok(self.push(t, Op::Transpose(a), req))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = fsum(self.value(a).data().iter().copied());
        let req = self.requires(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), req)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = fsum(self.value(a).data().iter().copied());
        let req = self.requires(&[a]);
        self.push(Tensor::scalar(s / n), Op::MeanAll(a), req)
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let data: Vec<f64> = (0..m)
            .map(|r| fsum(src[r * n..(r + 1) * n].iter().copied()))
            .collect();
        let req = self.requires(&[a]);
        self.push(Tensor::vector(data), Op::RowSums(a), req)
    }

    pub fn col_sums(&mut self, a: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let data: Vec<f64> = (0..n)
            .map(|c| fsum((0..m).map(|r| src[r * n + c])))
            .collect();
        let req = self.requires(&[a]);
        self.push(Tensor::vector(data), Op::ColSums(a), req)
    }

    pub fn row_means(&mut self, a: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let data: Vec<f64> = (0..m)
            .map(|r| fsum(src[r * n..(r + 1) * n].iter().copied()) / n as f64)
            .collect();
        let req = self.requires(&[a]);
        self.push(Tensor::vector(data), Op::RowMeans(a), req)
    }

    pub fn col_means(&mut self, a: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let data: Vec<f64> = (0..n)
            .map(|c| fsum((0..m).map(|r| src[r * n + c])) / m as f64)
            .collect();
        let req = self.requires(&[a]);
        self.push(Tensor::vector(data), Op::ColMeans(a), req)
    }

    // ── Shape ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumGradError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(self.shape_err("reshape", &[a]));
        }
        let t = Tensor::from_vec(shape, self.value(a).data().to_vec())?;
        let req = self.requires(&[a]);
        Ok(self.push(t, Op::Reshape(a), req))
    }

    /// Stack inputs vertically. 1-D inputs count as single rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumGradError> {
        if parts.is_empty() {
            return Err(NumGradError::BadShape("concat of zero tensors".into()));
        }
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        for p in parts {
            if self.value(*p).cols() != n {
                return Err(self.shape_err("concat_rows", parts));
            }
            rows += self.value(*p).rows();
        }
        let mut data = Vec::with_capacity(rows * n);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let t = Tensor::from_vec(&[rows, n], data)?;
        let req = self.requires(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), req))
    }

    /// Stack matrices side by side; all inputs must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumGradError> {
        if parts.is_empty() {
            return Err(NumGradError::BadShape("concat of zero tensors".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut cols = 0;
        for p in parts {
            if self.value(*p).rows() != m {
                return Err(self.shape_err("concat_cols", parts));
            }
            cols += self.value(*p).cols();
        }
        let mut data = vec![0.0; m * cols];
        let mut offset = 0;
        for p in parts {
            let pc = self.value(*p).cols();
            let src = self.value(*p).data();
            for r in 0..m {
                data[r * cols + offset..r * cols + offset + pc]
                    .copy_from_slice(&src[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let t = Tensor::from_vec(&[m, cols], data)?;
        let req = self.requires(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), req))
    }

    /// Select rows by index (embedding lookup). Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumGradError> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if let Some(bad) = indices.iter().find(|i| **i >= m) {
            return Err(NumGradError::BadShape(format!(
                "gather_rows index {bad} out of range for {m} rows"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let t = Tensor::from_vec(&[indices.len(), n], data)?;
        let req = self.requires(&[a]);
        Ok(self.push(t, Op::GatherRows(a, indices.to_vec()), req))
    }

    /// Per-row layer normalization: gain and bias are length-n vectors.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, NumGradError> {
        let (m, n) = (self.value(x).rows(), self.value(x).cols());
        if self.value(gamma).shape() != [n] || self.value(beta).shape() != [n] {
            return Err(self.shape_err("layer_norm", &[x, gamma, beta]));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let xh = (row[c] - mean) * is;
                xhat[r * n + c] = xh;
                data[r * n + c] = xh * g[c] + b[c];
            }
        }
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        let req = self.requires(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            req,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Consumes the tape's one backward
    /// budget; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumGradError> {
        if self.spent {
            return Err(NumGradError::TapeConsumed);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NumGradError::NonScalarLoss(format!(
                "{:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            // Keep leaf gradients; interior gradients were already consumed.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::from_vec(self.nodes[i].value.shape(), data)
                        .expect("gradient matches value shape")
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let add_into = |grads: &mut [Option<Vec<f64>>], v: Var, contrib: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            contrib(slot);
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(grads, *a, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                });
                add_into(grads, *b, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let n = self.nodes[row.0].value.numel();
                add_into(grads, *a, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                });
                add_into(grads, *row, &mut |d| {
                    for (k, gv) in g.iter().enumerate() {
                        d[k % n] += gv;
                    }
                });
            }
            Op::Sub(a, b) => {
                add_into(grads, *a, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                });
                add_into(grads, *b, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                add_into(grads, *b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * c;
                    }
                });
            }
            Op::AddScalar(a) => {
                add_into(grads, *a, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                });
            }
            Op::ScaleBy(a, s) => {
                let sv = self.nodes[s.0].value.data()[0];
                let av = self.nodes[a.0].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * sv;
                    }
                });
                add_into(grads, *s, &mut |d| {
                    d[0] += g.iter().zip(av).map(|(gv, xv)| gv * xv).sum::<f64>();
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.cols();
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                // dA = G · Bᵀ
                add_into(grads, *a, &mut |d| {
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += g[r * n + c] * bv[p * n + c];
                            }
                            d[r * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ · G
                add_into(grads, *b, &mut |d| {
                    for p in 0..k {
                        for c in 0..n {
                            let mut s = 0.0;
                            for r in 0..m {
                                s += av[r * k + p] * g[r * n + c];
                            }
                            d[p * n + c] += s;
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                add_into(grads, *a, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                });
            }
            Op::Ln(a) => {
                let x = self.nodes[a.0].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / x[k];
                    }
                });
            }
            Op::Softplus(a) => {
                let x = self.nodes[a.0].value.data();
                add_into(grads, *a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * stable_sigmoid(x[k]);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                let y = self.nodes[i].value.data();
                add_into(grads, *a, &mut |d| {
                    for r in 0..m {
                        let base = r * n;
                        let dot: f64 = (0..n).map(|c| g[base + c] * y[base + c]).sum();
                        for c in 0..n {
                            d[base + c] += y[base + c] * (g[base + c] - dot);
                        }
                    }
                });
            }
            Op::SoftmaxCols(a) => {
                let (m, n) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                let y = self.nodes[i].value.data();
                add_into(grads, *a, &mut |d| {
                    for c in 0..n {
                        let dot: f64 = (0..m).map(|r| g[r * n + c] * y[r * n + c]).sum();
                        for r in 0..m {
                            d[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                add_into(grads, *a, &mut |d| {
                    for dst in d.iter_mut() {
                        *dst += g[0];
                    }
                });
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.numel() as f64;
                add_into(grads, *a, &mut |d| {
                    for dst in d.iter_mut() {
                        *dst += g[0] / n;
                    }
                });
            }
            Op::RowSums(a) => {
                let n = self.nodes[a.0].value.cols();
                add_into(grads, *a, &mut |d| {
                    for (k, dst) in d.iter_mut().enumerate() {
                        *dst += g[k / n];
                    }
                });
            }
            Op::ColSums(a) => {
                let n = self.nodes[a.0].value.cols();
                add_into(grads, *a, &mut |d| {
                    for (k, dst) in d.iter_mut().enumerate() {
                        *dst += g[k % n];
                    }
                });
            }
            Op::RowMeans(a) => {
                let n = self.nodes[a.0].value.cols();
                add_into(grads, *a, &mut |d| {
                    for (k, dst) in d.iter_mut().enumerate() {
                        *dst += g[k / n] / n as f64;
                    }
                });
            }
            Op::ColMeans(a) => {
                let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                add_into(grads, *a, &mut |d| {
                    for (k, dst) in d.iter_mut().enumerate() {
                        *dst += g[k % n] / m as f64;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let numel = self.nodes[p.0].value.numel();
                    let local = &g[offset..offset + numel];
                    add_into(grads, *p, &mut |d| {
                        for (dst, gv) in d.iter_mut().zip(local) {
                            *dst += gv;
                        }
                    });
                    offset += numel;
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.nodes[i].value.rows();
                let total = self.nodes[i].value.cols();
                let mut offset = 0;
                for p in parts {
                    let pc = self.nodes[p.0].value.cols();
                    let off = offset;
                    add_into(grads, *p, &mut |d| {
                        for r in 0..m {
                            for c in 0..pc {
                                d[r * pc + c] += g[r * total + off + c];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::GatherRows(a, indices) => {
                let n = self.nodes[a.0].value.cols();
                add_into(grads, *a, &mut |d| {
                    for (t, &src_row) in indices.iter().enumerate() {
                        for c in 0..n {
                            d[src_row * n + c] += g[t * n + c];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                add_into(grads, *a, &mut |d| {
                    for (dst, gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                let gam = self.nodes[gamma.0].value.data();
                add_into(grads, *x, &mut |d| {
                    for r in 0..m {
                        let base = r * n;
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for c in 0..n {
                            let dxh = g[base + c] * gam[c];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[base + c];
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        for c in 0..n {
                            let dxh = g[base + c] * gam[c];
                            d[base + c] += inv_std[r]
                                * (dxh - mean_dxhat - xhat[base + c] * mean_dxhat_xhat);
                        }
                    }
                });
                add_into(grads, *gamma, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                });
                add_into(grads, *beta, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[c] += g[r * n + c];
                        }
                    }
                });
            }
        }
    }
}

/// Row-major matrix product; inner sums accumulate naively left to right.
/// Rows of `a` with zero entries skip work (and keep masked zeros from
/// absorbing non-finite partners).
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Matrix product with exactly rounded inner sums: each output element is
/// the nearest f64 to Σ_p round(a[r,p]·b[p,c]), so reindexing the contracted
/// axis (columns of `a` together with rows of `b`) leaves the output bitwise
/// unchanged. Several times slower than `matmul_raw`; reserved for
/// contractions over set-valued axes where element order must not leak.
pub(crate) fn matmul_exact_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let mut accs: Vec<ExactAcc> = (0..n).map(|_| ExactAcc::new()).collect();
    for r in 0..m {
        for acc in accs.iter_mut() {
            *acc = ExactAcc::new();
        }
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (acc, bv) in accs.iter_mut().zip(brow) {
                acc.add(av * bv);
            }
        }
        for (o, acc) in out[r * n..(r + 1) * n].iter_mut().zip(&accs) {
            *o = acc.sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_gradients, DEFAULT_REL_TOL, DEFAULT_STEP};
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Run `build` once for analytic gradients, then re-run it around
    /// perturbed parameters and compare against central differences.
    fn fd_check(params: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Option<&Tensor>> = vars.iter().map(|v| grads.get(*v)).collect();
        let report = check_gradients(params, &analytic, DEFAULT_STEP, |ps| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p)).collect();
            let l = build(&mut t, &vs);
            Ok(t.scalar_value(l))
        })
        .unwrap();
        report.max_rel_err
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, 1.0, &mut rng).with_grad()
    }

    #[test]
    fn square_gradient_at_three() {
        let x = Tensor::scalar(3.0).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let y = tape.mul(v, v).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_relative_eq!(grads.get(v).unwrap().data()[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn fixed_activation_values() {
        let x = Tensor::vector(vec![0.0]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sigmoid(v);
        let t = tape.tanh(v);
        assert_relative_eq!(tape.value(s).data()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(tape.value(t).data()[0], 0.0, epsilon = 1e-15);
        // d sigmoid / dx at 0 is 1/4.
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        assert_relative_eq!(grads.get(v).unwrap().data()[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.softmax_rows(v);
        for &p in tape.value(y).data() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_masks_neg_infinity_exactly() {
        let x = Tensor::vector(vec![1.0, f64::NEG_INFINITY, 2.0]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let y = tape.softmax_rows(v);
        assert_eq!(tape.value(y).data()[1], 0.0);
        let s: f64 = tape.value(y).data().iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        // Masked coordinates must also receive an exactly-zero gradient.
        let w = tape.constant(Tensor::vector(vec![3.0, 1.0, -2.0]));
        let wy = tape.mul(y, w).unwrap();
        let loss = tape.sum_all(wy);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(v).unwrap().data()[1], 0.0);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let x = Tensor::scalar(2.0).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let y = tape.mul(v, v).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(NumGradError::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let x = Tensor::vector(vec![1.0, 2.0]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        assert!(matches!(
            tape.backward(v),
            Err(NumGradError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn reused_variable_accumulates_gradient() {
        // y = x·x + x ⇒ dy/dx = 2x + 1
        let x = Tensor::scalar(4.0).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let sq = tape.mul(v, v).unwrap();
        let y = tape.add(sq, v).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_relative_eq!(grads.get(v).unwrap().data()[0], 9.0, epsilon = 1e-12);
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let c = tape.matmul(va, vb).unwrap();
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn exact_matmul_ignores_contraction_order() {
        // Reindexing the contracted axis (columns of a, rows of b, in step)
        // must not move a single bit of the product.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (m, k, n) = (3usize, 7usize, 4usize);
            let a = Tensor::randn(&[m, k], 1.0, &mut rng);
            let b = Tensor::randn(&[k, n], 1.0, &mut rng);
            let mut perm: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                perm.swap(i, rand::Rng::gen_range(&mut rng, 0..=i));
            }
            let mut ap = vec![0.0; m * k];
            let mut bp = vec![0.0; k * n];
            for (new, &old) in perm.iter().enumerate() {
                for r in 0..m {
                    ap[r * k + new] = a.data()[r * k + old];
                }
                bp[new * n..(new + 1) * n].copy_from_slice(&b.data()[old * n..(old + 1) * n]);
            }
            let base = matmul_exact_raw(a.data(), b.data(), m, k, n);
            let shuf = matmul_exact_raw(&ap, &bp, m, k, n);
            for (x, y) in base.iter().zip(&shuf) {
                assert_eq!(x.to_bits(), y.to_bits(), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn exact_matmul_agrees_with_naive_product_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Tensor::randn(&[4, 9], 1.0, &mut rng);
        let b = Tensor::randn(&[9, 5], 1.0, &mut rng);
        let fast = matmul_raw(a.data(), b.data(), 4, 9, 5);
        let exact = matmul_exact_raw(a.data(), b.data(), 4, 9, 5);
        for (x, y) in fast.iter().zip(&exact) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn every_op_passes_gradient_check() {
        // One composite expression per op family, all against central FD.
        let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
            (
                "add_mul_sub",
                vec![randn(&[2, 3], 1), randn(&[2, 3], 2)],
                Box::new(|t, v| {
                    let a = t.add(v[0], v[1]).unwrap();
                    let b = t.sub(v[0], v[1]).unwrap();
                    let c = t.mul(a, b).unwrap();
                    t.sum_all(c)
                }),
            ),
            (
                "scale_add_scalar",
                vec![randn(&[4], 3)],
                Box::new(|t, v| {
                    let a = t.scale(v[0], -2.5);
                    let b = t.add_scalar(a, 0.7);
                    let c = t.mul(b, b).unwrap();
                    t.mean_all(c)
                }),
            ),
            (
                "scale_by",
                vec![randn(&[2, 2], 4), randn(&[1], 5)],
                Box::new(|t, v| {
                    let a = t.scale_by(v[0], v[1]).unwrap();
                    let b = t.tanh(a);
                    t.sum_all(b)
                }),
            ),
            (
                "matmul_chain",
                vec![randn(&[2, 3], 6), randn(&[3, 4], 7), randn(&[4], 8)],
                Box::new(|t, v| {
                    let h = t.matmul(v[0], v[1]).unwrap();
                    let h = t.add_row(h, v[2]).unwrap();
                    let h = t.tanh(h);
                    t.sum_all(h)
                }),
            ),
            (
                "transpose",
                vec![randn(&[3, 2], 9)],
                Box::new(|t, v| {
                    let at = t.transpose(v[0]).unwrap();
                    let g = t.matmul(at, v[0]).unwrap();
                    let s = t.sigmoid(g);
                    t.sum_all(s)
                }),
            ),
            (
                "exp_ln_softplus",
                vec![randn(&[3], 10)],
                Box::new(|t, v| {
                    let e = t.exp(v[0]);
                    let l = t.ln(e);
                    let sp = t.softplus(l);
                    t.sum_all(sp)
                }),
            ),
            (
                "softmax_rows_weighted",
                vec![randn(&[3, 4], 11)],
                Box::new(|t, v| {
                    let y = t.softmax_rows(v[0]);
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                }),
            ),
            (
                "softmax_cols_weighted",
                vec![randn(&[3, 4], 12)],
                Box::new(|t, v| {
                    let y = t.softmax_cols(v[0]);
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                }),
            ),
            (
                "reductions",
                vec![randn(&[3, 4], 13)],
                Box::new(|t, v| {
                    let rs = t.row_sums(v[0]);
                    let cs = t.col_sums(v[0]);
                    let rm = t.row_means(v[0]);
                    let cm = t.col_means(v[0]);
                    let a = t.mul(rs, rm).unwrap();
                    let b = t.mul(cs, cm).unwrap();
                    let sa = t.sum_all(a);
                    let sb = t.sum_all(b);
                    t.add(sa, sb).unwrap()
                }),
            ),
            (
                "concat_rows_cols",
                vec![randn(&[2, 3], 14), randn(&[1, 3], 15), randn(&[2, 2], 16)],
                Box::new(|t, v| {
                    let rows = t.concat_rows(&[v[0], v[1]]).unwrap();
                    let cols = t.concat_cols(&[v[0], v[2]]).unwrap();
                    let a = t.sum_all(rows);
                    let tb = t.tanh(cols);
                    let b = t.sum_all(tb);
                    t.add(a, b).unwrap()
                }),
            ),
            (
                "gather_rows_repeated",
                vec![randn(&[4, 3], 17)],
                Box::new(|t, v| {
                    let g = t.gather_rows(v[0], &[2, 0, 2, 3]).unwrap();
                    let sq = t.mul(g, g).unwrap();
                    t.sum_all(sq)
                }),
            ),
            (
                "reshape",
                vec![randn(&[2, 6], 18)],
                Box::new(|t, v| {
                    let r = t.reshape(v[0], &[3, 4]).unwrap();
                    let y = t.softmax_rows(r);
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                }),
            ),
            (
                "layer_norm",
                vec![randn(&[3, 5], 19), randn(&[5], 20), randn(&[5], 21)],
                Box::new(|t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                }),
            ),
        ];
        for (name, params, build) in cases {
            let err = fd_check(&params, |t, v| build(t, v));
            assert!(
                err <= DEFAULT_REL_TOL,
                "{name}: max relative error {err:.3e}"
            );
        }
    }

    #[test]
    fn three_layer_mlp_gradient_check() {
        let params = vec![
            randn(&[4, 8], 30),
            randn(&[8], 31),
            randn(&[8, 8], 32),
            randn(&[8], 33),
            randn(&[8, 1], 34),
            randn(&[1], 35),
        ];
        let x = Tensor::randn(&[5, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(36));
        let err = fd_check(&params, |t, v| {
            let xin = t.constant(x.clone());
            let h1 = t.matmul(xin, v[0]).unwrap();
            let h1 = t.add_row(h1, v[1]).unwrap();
            let h1 = t.tanh(h1);
            let h2 = t.matmul(h1, v[2]).unwrap();
            let h2 = t.add_row(h2, v[3]).unwrap();
            let h2 = t.sigmoid(h2);
            let out = t.matmul(h2, v[4]).unwrap();
            let out = t.add_row(out, v[5]).unwrap();
            t.mean_all(out)
        });
        assert!(err <= DEFAULT_REL_TOL, "max relative error {err:.3e}");
    }

    #[test]
    fn constant_inputs_get_no_gradient() {
        let x = Tensor::scalar(2.0).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let c = tape.constant_scalar(3.0);
        let y = tape.mul(v, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_relative_eq!(grads.get(v).unwrap().data()[0], 3.0, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_sum_to_one(
            rows in 1usize..5,
            cols in 1usize..6,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[rows, cols], 3.0, &mut rng);
            let mut tape = Tape::new();
            let v = tape.constant(x);
            let y = tape.softmax_rows(v);
            for r in 0..rows {
                let s: f64 = (0..cols).map(|c| tape.value(y).at(r, c)).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn random_two_layer_nets_pass_gradient_check(
            din in 1usize..5,
            dhid in 1usize..6,
            batch in 1usize..4,
            seed in 0u64..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = vec![
                Tensor::randn(&[din, dhid], 0.8, &mut rng).with_grad(),
                Tensor::randn(&[dhid], 0.5, &mut rng).with_grad(),
                Tensor::randn(&[dhid, 1], 0.8, &mut rng).with_grad(),
            ];
            let x = Tensor::randn(&[batch, din], 1.0, &mut rng);
            let err = fd_check(&params, |t, v| {
                let xin = t.constant(x.clone());
                let h = t.matmul(xin, v[0]).unwrap();
                let h = t.add_row(h, v[1]).unwrap();
                let h = t.tanh(h);
                let o = t.matmul(h, v[2]).unwrap();
                t.mean_all(o)
            });
            prop_assert!(err <= DEFAULT_REL_TOL, "max relative error {}", err);
        }
    }
}
