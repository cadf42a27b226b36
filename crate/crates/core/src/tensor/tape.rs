use super::kernels::{self, add_into};
use super::{matmul_mismatch, same_shape, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    MaskedSoftmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad_id: usize,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; every node's inputs precede it.
///
/// A tape is single-threaded state. Independent computations (one per
/// training sample, say) use independent tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not require
    /// grad or is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(matmul_mismatch(
                self.value(a).shape(),
                &[k2, n], // shape of bᵀ
            ));
        }
        let data = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.mul(a, b)
    }

    /// Adds a bias vector (length = last axis) to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_bias(self.value(bias))?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * axis_len + a) * inner + i;
                let max = (0..axis_len).map(|a| src[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..axis_len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..axis_len {
                    out[idx(a)] /= z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
            rg,
        ))
    }

    /// Row-wise softmax of a matrix restricted to entries where `mask` is
    /// true. Disallowed entries get weight exactly 0; a row with no allowed
    /// entry is all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if mask.len() != rows * cols {
            return Err(Error::dim(
                "masked_softmax",
                format!("mask of length {} for a {rows}x{cols} matrix", mask.len()),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            let max = span
                .clone()
                .filter(|&i| mask[i])
                .map(|i| src[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for i in span.clone().filter(|&i| mask[i]) {
                let e = (src[i] - max).exp();
                out[i] = e;
                z += e;
            }
            for i in span.filter(|&i| mask[i]) {
                out[i] /= z;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::MaskedSoftmax { x }, rg))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().unwrap_or(&0);
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.value(p).numel() != width {
                return Err(Error::dim(
                    "layer_norm",
                    format!("{name} of length {} for rows of width {width}", self.value(p).numel()),
                ));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.numel() / width;
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let denom = (var + eps).sqrt();
            // A constant row with eps = 0 normalizes to zeros rather than NaN.
            let rs = if denom > 0.0 { 1.0 / denom } else { 0.0 };
            rstd[r] = rs;
            for c in 0..width {
                let h = (row[c] - mean) * rs;
                xhat[r * width + c] = h;
                out[r * width + c] = h * g[c] + b[c];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean negative log-softmax of `targets` under `logits` (T×V), skipping
    /// positions whose target is `pad_id`. An all-pad sequence has loss 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        let (t, v) = self.value(logits).dims2()?;
        if targets.len() != t {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {t} logit rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y != pad_id && y >= v) {
            return Err(Error::dim(
                "cross_entropy",
                format!("target id {bad} outside vocabulary of {v}"),
            ));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; t * v];
        let mut total = 0.0;
        let mut count = 0;
        for (r, &y) in targets.iter().enumerate() {
            if y == pad_id {
                continue;
            }
            let row = &src[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let lse = max + z.ln();
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
            total += lse - row[y];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad_id,
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat_rows of nothing".into()))?;
        let (_, cols) = self.value(*first).dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::dim(
                    "concat_rows",
                    format!("column counts {cols} and {c} differ"),
                ));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat_cols of nothing".into()))?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("row counts {rows} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if len == 0 || start + len > rows {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} of a {rows}-row matrix", start + len),
            ));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![len, cols], data),
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if len == 0 || start + len > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{} of a {cols}-column matrix", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], data),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::Empty("gather_rows with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::dim(
                    "gather_rows",
                    format!("id {id} outside table of {rows} rows"),
                ));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), cols], data),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Drop gradients of intermediate values; keep leaves only.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => add_into(acc, &contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accum_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce() -> Vec<f64>) {
        if self.nodes[v.0].requires_grad {
            self.accum(grads, v, f());
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked in forward");
                let n = self.value(*b).shape()[1];
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                self.accum_with(grads, *a, || kernels::matmul_nt(g, val(*b), m, n, k));
                self.accum_with(grads, *b, || kernels::matmul_tn(val(*a), g, m, k, n));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked in forward");
                let n = self.value(*b).shape()[0];
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                self.accum_with(grads, *a, || kernels::matmul(g, val(*b), m, n, k));
                self.accum_with(grads, *b, || kernels::matmul_tn(g, val(*a), m, n, k));
            }
            Op::Add(a, b) => {
                self.accum_with(grads, *a, || g.to_vec());
                self.accum_with(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accum_with(grads, *a, || g.to_vec());
                self.accum_with(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                self.accum_with(grads, *a, || g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                self.accum_with(grads, *b, || g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
            }
            Op::AddBias(x, bias) => {
                self.accum_with(grads, *x, || g.to_vec());
                self.accum_with(grads, *bias, || {
                    let w = self.value(*bias).numel();
                    let mut db = vec![0.0; w];
                    for row in g.chunks(w) {
                        add_into(&mut db, row);
                    }
                    db
                });
            }
            Op::Scale(x, c) => self.accum_with(grads, *x, || g.iter().map(|v| v * c).collect()),
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accum_with(grads, *x, || g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accum_with(grads, *x, || g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Relu(x) => {
                self.accum_with(grads, *x, || {
                    g.iter()
                        .zip(val(*x))
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect()
                });
            }
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                let y = node.value.data();
                self.accum_with(grads, *x, || {
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |a: usize| (o * axis_len + a) * inner + i;
                            let dot: f64 = (0..*axis_len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                            for a in 0..*axis_len {
                                dx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                            }
                        }
                    }
                    dx
                });
            }
            Op::MaskedSoftmax { x, .. } => {
                let y = node.value.data();
                let cols = node.value.shape()[1];
                self.accum_with(grads, *x, || {
                    let mut dx = vec![0.0; y.len()];
                    for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                        // Masked entries have y = 0, so they drop out of both terms.
                        let dot = kernels::dot(yr, gr);
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    dx
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let width = self.value(*gain).numel();
                let gv = val(*gain);
                self.accum_with(grads, *gain, || {
                    let mut dg = vec![0.0; width];
                    for (gr, hr) in g.chunks(width).zip(xhat.chunks(width)) {
                        for c in 0..width {
                            dg[c] += gr[c] * hr[c];
                        }
                    }
                    dg
                });
                self.accum_with(grads, *bias, || {
                    let mut db = vec![0.0; width];
                    for gr in g.chunks(width) {
                        add_into(&mut db, gr);
                    }
                    db
                });
                self.accum_with(grads, *x, || {
                    let mut dx = vec![0.0; g.len()];
                    let n = width as f64;
                    for (r, (gr, hr)) in g.chunks(width).zip(xhat.chunks(width)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = kernels::dot(&dh, hr) / n;
                        for c in 0..width {
                            dx[r * width + c] = rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                    dx
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad_id,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = self.value(*logits).shape()[1];
                let scale = g[0] / *count as f64;
                self.accum_with(grads, *logits, || {
                    let mut dl = vec![0.0; probs.len()];
                    for (r, &y) in targets.iter().enumerate() {
                        if y == *pad_id {
                            continue;
                        }
                        for c in 0..v {
                            dl[r * v + c] = probs[r * v + c] * scale;
                        }
                        dl[r * v + y] -= scale;
                    }
                    dl
                });
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accum_with(grads, *x, || vec![g[0]; n]);
            }
            Op::Reshape(x) => self.accum_with(grads, *x, || g.to_vec()),
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().expect("checked in forward");
                self.accum_with(grads, *x, || kernels::transpose(g, c, r));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    let slice = &g[offset..offset + n];
                    self.accum_with(grads, *p, || slice.to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2().expect("matrix");
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).shape()[1];
                    self.accum_with(grads, *p, || {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + start..r * total + start + w]);
                        }
                        d
                    });
                    start += w;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(*x).shape()[1];
                self.accum_with(grads, *x, || {
                    let mut d = vec![0.0; self.value(*x).numel()];
                    d[start * cols..start * cols + g.len()].copy_from_slice(g);
                    d
                });
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).dims2().expect("matrix");
                let len = node.value.shape()[1];
                self.accum_with(grads, *x, || {
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    d
                });
            }
            Op::GatherRows { table, ids } => {
                let (rows, cols) = self.value(*table).dims2().expect("matrix");
                self.accum_with(grads, *table, || {
                    let mut d = vec![0.0; rows * cols];
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * cols..(id + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                    d
                });
            }
        }
    }
}
