use std::borrow::Cow;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { input: Var, scale: f64 },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatVec { a: Var, v: Var, m: usize, k: usize },
    Transpose { input: Var, rows: usize, cols: usize },
    Reshape(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Softmax { input: Var, cols: usize },
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    XLogX(Var),
    LayerNorm { input: Var, cols: usize, rstd: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Concat { inputs: Vec<Var>, sizes: Vec<usize> },
    Slice { input: Var, offset: usize },
    EmbeddingLookup { table: Var, ids: Vec<usize>, cols: usize },
    KlFromConst { target: Vec<f64>, input: Var },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations built during a forward pass.
///
/// Every op takes `Var`s that already exist on the tape, so the node list is
/// topologically sorted by construction. Leaves may borrow their values
/// (model parameters) for the lifetime of the tape.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, or zeros of length `len` if the loss does not reach it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }

    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue(op))
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        Tensor::new(node.shape.clone(), node.value.to_vec()).expect("tape values are valid")
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    /// Records a leaf that borrows `tensor`; gradients flow to it when the tensor requires them.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.push_leaf(
            tensor.shape().to_vec(),
            Cow::Borrowed(tensor.data()),
            tensor.requires_grad(),
        )
    }

    /// Records a borrowed leaf with an explicit gradient flag, ignoring the tensor's own flag.
    pub fn leaf_with(&mut self, tensor: &'a Tensor, requires_grad: bool) -> Var {
        self.push_leaf(tensor.shape().to_vec(), Cow::Borrowed(tensor.data()), requires_grad)
    }

    /// Records an owned leaf.
    pub fn input(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        let shape = tensor.shape().to_vec();
        self.push_leaf(shape, Cow::Owned(tensor.into_data()), requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, value, op, &[a, b])
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, value, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map("affine", a, Op::Affine { input: a, scale }, |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bpj) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bpj;
                }
            }
        }
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    /// `[m, k] x [k] -> [m]`.
    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matvec", a)?;
        if self.shape(v) != [k] {
            return Err(Error::shape("matvec", format!("[{m}, {k}] x {:?}", self.shape(v))));
        }
        let (av, vv) = (self.value(a), self.value(v));
        let out: Vec<f64> = (0..m)
            .map(|i| av[i * k..(i + 1) * k].iter().zip(vv).map(|(x, y)| x * y).sum())
            .collect();
        self.push("matvec", vec![m], out, Op::MatVec { a, v, m, k }, &[a, v])
    }

    /// Inner product of two vectors of equal length, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let prod = self.mul(a, b)?;
        self.sum(prod)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims("transpose", a)?;
        let av = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = av[i * cols + j];
            }
        }
        self.push("transpose", vec![cols, rows], out, Op::Transpose { input: a, rows, cols }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let value = self.value(a).to_vec();
        self.push("reshape", shape, value, Op::Reshape(a), &[a])
    }

    fn row_op(&mut self, name: &'static str, x: Var, r: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (_, cols) = self.matrix_dims(name, x)?;
        if self.shape(r) != [cols] {
            return Err(Error::shape(name, format!("{:?} with row {:?}", self.shape(x), self.shape(r))));
        }
        let rv = self.value(r);
        let value: Vec<f64> = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(rv).map(|(a, b)| f(*a, *b)))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, value, op, &[x, r])
    }

    /// Adds the vector `row` to every row of the matrix `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("add_row", x, row, Op::AddRow(x, row), |a, b| a + b)
    }

    /// Multiplies every row of `x` elementwise by `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("mul_row", x, row, Op::MulRow(x, row), |a, b| a * b)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_masked(a, None)
    }

    /// Softmax over the last axis. Positions where `mask` is false get
    /// probability exactly zero; `mask` has one entry per last-axis position.
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let cols = last_dim(self.shape(a));
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(Error::shape("softmax", format!("mask {} vs {cols}", m.len())));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::AllPositionsMasked);
            }
        }
        let valid = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = vec![0.0; self.value(a).len()];
        for (row, dst) in self.value(a).chunks(cols).zip(out.chunks_mut(cols)) {
            let max = (0..cols)
                .filter(|&j| valid(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in (0..cols).filter(|&j| valid(j)) {
                dst[j] = (row[j] - max).exp();
                total += dst[j];
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push("softmax", shape, out, Op::Softmax { input: a, cols }, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).iter().find(|&&x| x <= 0.0) {
            return Err(Error::LogOfNonPositive(bad));
        }
        self.map("log", a, Op::Log(a), f64::ln)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    /// `x ln x` elementwise with `0 ln 0 := 0`. Negative inputs are rejected.
    pub fn xlogx(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).iter().find(|&&x| x < 0.0) {
            return Err(Error::LogOfNonPositive(bad));
        }
        self.map("xlogx", a, Op::XLogX(a), |x| if x > 0.0 { x * x.ln() } else { 0.0 })
    }

    /// Normalizes each row (last axis) to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let cols = last_dim(self.shape(a));
        let mut out = vec![0.0; self.value(a).len()];
        let mut rstds = Vec::new();
        for (row, dst) in self.value(a).chunks(cols).zip(out.chunks_mut(cols)) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for (d, x) in dst.iter_mut().zip(row) {
                *d = (x - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let shape = self.shape(a).to_vec();
        self.push("layer_norm", shape, out, Op::LayerNorm { input: a, cols, rstd: rstds }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).iter().sum();
        self.push("sum", Vec::new(), vec![total], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Vec::new(), vec![mean], Op::Mean(a), &[a])
    }

    /// Concatenates along the first axis. Scalars count as length-1 vectors.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail = |s: &[usize]| if s.is_empty() { Vec::new() } else { s[1..].to_vec() };
        let rest = tail(self.shape(*first));
        let mut rows = 0;
        let mut sizes = Vec::with_capacity(inputs.len());
        let mut value = Vec::new();
        for &v in inputs {
            let s = self.shape(v);
            if tail(s) != rest {
                return Err(Error::shape("concat", format!("{s:?} vs trailing {rest:?}")));
            }
            rows += s.first().copied().unwrap_or(1);
            sizes.push(self.value(v).len());
            value.extend_from_slice(self.value(v));
        }
        let mut shape = vec![rows];
        shape.extend(rest);
        self.push("concat", shape, value, Op::Concat { inputs: inputs.to_vec(), sizes }, inputs)
    }

    /// Rows `start..end` along the first axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rows = *shape.first().ok_or_else(|| Error::shape("slice", "scalar input"))?;
        if start >= end || end > rows {
            return Err(Error::shape("slice", format!("{start}..{end} of {rows}")));
        }
        let inner: usize = shape[1..].iter().product();
        let value = self.value(a)[start * inner..end * inner].to_vec();
        let mut out_shape = shape;
        out_shape[0] = end - start;
        self.push("slice", out_shape, value, Op::Slice { input: a, offset: start * inner }, &[a])
    }

    /// Element `i` of a vector, as a scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("pick", format!("expected a vector, got {:?}", self.shape(a))));
        }
        let len = self.shape(a)[0];
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        let s = self.slice(a, i, i + 1)?;
        self.reshape(s, Vec::new())
    }

    /// Gathers rows of `table` (`[vocab, h]`) by id, giving `[ids.len(), h]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, cols) = self.matrix_dims("embedding_lookup", table)?;
        if ids.is_empty() {
            return Err(Error::shape("embedding_lookup", "no ids"));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfVocab { id, vocab_size: vocab });
        }
        let tv = self.value(table);
        let value: Vec<f64> = ids.iter().flat_map(|&id| tv[id * cols..(id + 1) * cols].iter().copied()).collect();
        self.push(
            "embedding_lookup",
            vec![ids.len(), cols],
            value,
            Op::EmbeddingLookup { table, ids: ids.to_vec(), cols },
            &[table],
        )
    }

    /// `KL(target || input)` where `target` is a constant distribution, using
    /// `0 ln 0 := 0`. Entries with zero target mass do not constrain `input`.
    pub fn kl_from_const(&mut self, target: &[f64], input: Var) -> Result<Var> {
        let q = self.value(input);
        if target.len() != q.len() {
            return Err(Error::SupportMismatch(target.len(), q.len()));
        }
        let mut total = 0.0;
        for (&p, &qi) in target.iter().zip(q) {
            if p > 0.0 {
                if qi <= 0.0 {
                    return Err(Error::LogOfNonPositive(qi));
                }
                total += p * (p.ln() - qi.ln());
            }
        }
        self.push(
            "kl_from_const",
            Vec::new(),
            vec![total],
            Op::KlFromConst { target: target.to_vec(), input },
            &[input],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Leaves the tape untouched, so it can be called more than once (for
    /// example to read an input gradient before extending the graph).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.shape(loss).is_empty() {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        for g in grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * bv[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * av[i];
                    }
                });
            }
            Op::Affine { input, scale } => {
                acc(*input, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += scale * d));
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dY B^T
                acc(*a, &mut |g| {
                    for i in 0..m {
                        let dyi = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            g[i * k + p] += dyi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = A^T dY
                acc(*b, &mut |g| {
                    for i in 0..m {
                        let dyi = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (gj, d) in g[p * n..(p + 1) * n].iter_mut().zip(dyi) {
                                *gj += aip * d;
                            }
                        }
                    }
                });
            }
            Op::MatVec { a, v, m, k } => {
                let (m, k) = (*m, *k);
                let (av, vv) = (self.value(*a), self.value(*v));
                acc(*a, &mut |g| {
                    for i in 0..m {
                        for p in 0..k {
                            g[i * k + p] += dy[i] * vv[p];
                        }
                    }
                });
                acc(*v, &mut |g| {
                    for i in 0..m {
                        for p in 0..k {
                            g[p] += dy[i] * av[i * k + p];
                        }
                    }
                });
            }
            Op::Transpose { input, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                acc(*input, &mut |g| {
                    for i in 0..rows {
                        for j in 0..cols {
                            g[i * cols + j] += dy[j * rows + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |g| add_into(g, dy)),
            Op::AddRow(x, r) => {
                let cols = self.value(*r).len();
                acc(*x, &mut |g| add_into(g, dy));
                acc(*r, &mut |g| {
                    for row in dy.chunks(cols) {
                        add_into(g, row);
                    }
                });
            }
            Op::MulRow(x, r) => {
                let rv = self.value(*r);
                let xv = self.value(*x);
                let cols = rv.len();
                acc(*x, &mut |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += dy[i] * rv[i % cols];
                    }
                });
                acc(*r, &mut |g| {
                    for (i, d) in dy.iter().enumerate() {
                        g[i % cols] += d * xv[i];
                    }
                });
            }
            Op::Softmax { input, cols } => {
                let cols = *cols;
                acc(*input, &mut |g| {
                    for ((gr, yr), dr) in g.chunks_mut(cols).zip(y.chunks(cols)).zip(dy.chunks(cols)) {
                        let inner: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gr[j] += yr[j] * (dr[j] - inner);
                        }
                    }
                });
            }
            Op::Log(a) => {
                let av = self.value(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] / av[i];
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |g| {
                for i in 0..g.len() {
                    g[i] += dy[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |g| {
                for i in 0..g.len() {
                    g[i] += dy[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::XLogX(a) => {
                let av = self.value(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            g[i] += dy[i] * (av[i].ln() + 1.0);
                        }
                    }
                });
            }
            Op::LayerNorm { input, cols, rstd } => {
                let cols = *cols;
                acc(*input, &mut |g| {
                    for (r, ((gr, yr), dr)) in g.chunks_mut(cols).zip(y.chunks(cols)).zip(dy.chunks(cols)).enumerate() {
                        let mean_dy = dr.iter().sum::<f64>() / cols as f64;
                        let mean_dyy = dr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for j in 0..cols {
                            gr[j] += rstd[r] * (dr[j] - mean_dy - yr[j] * mean_dyy);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|gi| *gi += dy[0])),
            Op::Mean(a) => acc(*a, &mut |g| {
                let scale = dy[0] / g.len() as f64;
                g.iter_mut().for_each(|gi| *gi += scale);
            }),
            Op::Concat { inputs, sizes } => {
                let mut offset = 0;
                for (v, size) in inputs.iter().zip(sizes) {
                    let part = &dy[offset..offset + size];
                    acc(*v, &mut |g| add_into(g, part));
                    offset += size;
                }
            }
            Op::Slice { input, offset } => {
                let offset = *offset;
                acc(*input, &mut |g| add_into(&mut g[offset..offset + dy.len()], dy));
            }
            Op::EmbeddingLookup { table, ids, cols } => {
                let cols = *cols;
                acc(*table, &mut |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * cols..(id + 1) * cols], &dy[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::KlFromConst { target, input } => {
                let q = self.value(*input);
                acc(*input, &mut |g| {
                    for i in 0..g.len() {
                        if target[i] > 0.0 {
                            g[i] -= dy[0] * target[i] / q[i];
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
