//! Wengert-tape reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation executed during a forward pass
//! together with the values needed for its backward rule. [`Graph::backward`]
//! replays the tape in exact reverse execution order, accumulating gradients
//! into per-node buffers. Storage is row-major and dense; the only implicit
//! shape rule is suffix broadcasting of the right operand in elementwise ops
//! (e.g. adding a `[d]` bias to an `[m, d]` matrix).

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax / reduction axis for rank-2 tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Detach,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, S),
    Matmul(Var, Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, offset: usize, len: usize },
    Softmax { src: Var, axis: Axis },
    LogSoftmax { src: Var, axis: Axis },
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { src: Var, gamma: Var, beta: Var, eps: f64 },
    Embedding { table: Var, ids: Vec<usize> },
    MaskedFill { src: Var, mask: Vec<u8> },
    SumAxis { src: Var, axis: Axis },
    MeanAxis { src: Var, axis: Axis },
    SumAll(Var),
    Reshape(Var),
    PickPerRow { src: Var, ids: Vec<usize> },
    CosineSim(Var, Var),
    NormalizeRows(Var),
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detach => "detach",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log-softmax",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layernorm",
            Op::Embedding { .. } => "embedding-lookup",
            Op::MaskedFill { .. } => "masked-fill",
            Op::SumAxis { .. } => "sum-over-axis",
            Op::MeanAxis { .. } => "mean-over-axis",
            Op::SumAll(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::PickPerRow { .. } => "pick-per-row",
            Op::CosineSim(..) => "cosine-similarity",
            Op::NormalizeRows(_) => "normalize-rows",
        }
    }
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
    /// True when a gradient path from a grad-requiring leaf reaches this node.
    needs_grad: bool,
}

/// The recording tape. One graph per forward/backward pass; confined to a
/// single thread.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

// Row-major suffix broadcast: rhs shape must equal a suffix of lhs shape,
// so the rhs element for lhs flat index i is i % rhs.numel().
fn suffix_broadcast(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

fn matmul_plain<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == S::ZERO {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let crow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += ail * brow[j];
            }
        }
    }
}

fn transpose_plain<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// (rows, cols) view of a rank-1/2 tensor; vectors are a single row.
fn as_2d(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => unreachable!("rank > 2 unsupported"),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated for `v` by the last [`Graph::backward`] call.
    /// `None` when no gradient path reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, densified to zeros when unreached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shape(v)),
        }
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(op.name(), "non-finite value in output"));
        }
        let id = self.nodes.len();
        self.nodes.push(Node { op, value, needs_grad });
        Ok(Var(id))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Leaves ───────────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        if value.rank() > 2 {
            return Err(Error::shape("leaf", format!("rank {} > 2", value.rank())));
        }
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value with the gradient path severed.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.push(Op::Detach, value, false)
    }

    // ── Elementwise binary (suffix broadcast on rhs) ─────────────────────

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        make: impl Fn(Var, Var) -> Op<S>,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !suffix_broadcast(va.shape(), vb.shape()) {
            return Err(Error::shape(
                op_name,
                format!("{:?} vs {:?} (rhs must be a suffix)", va.shape(), vb.shape()),
            ));
        }
        let bn = vb.numel();
        let data: Vec<S> =
            va.data().iter().enumerate().map(|(i, &x)| f(x, vb.data()[i % bn])).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(make(a, b), value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.nodes[a.0].value.data().iter().map(|&x| x * c).collect(),
        )?;
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), value, needs)
    }

    // ── Linear algebra ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![S::ZERO; m * n];
        matmul_plain(va.data(), vb.data(), m, k, n, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Matmul(a, b), value, needs)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if va.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", va.shape())));
        }
        let (r, c) = (va.rows(), va.cols());
        let value = Tensor::matrix(c, r, transpose_plain(va.data(), r, c))?;
        let needs = self.needs(a);
        self.push(Op::Transpose(a), value, needs)
    }

    // ── Structure ────────────────────────────────────────────────────────

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let rank = self.shape(inputs[0]).len();
        if axis >= rank || inputs.iter().any(|&v| self.shape(v).len() != rank) {
            return Err(Error::shape("concat", "rank mismatch or bad axis"));
        }
        for &v in inputs {
            for d in 0..rank {
                if d != axis && self.shape(v)[d] != self.shape(inputs[0])[d] {
                    return Err(Error::shape("concat", "non-axis extents differ"));
                }
            }
        }
        let total: usize = inputs.iter().map(|&v| self.shape(v)[axis]).sum();
        let mut shape = self.shape(inputs[0]).to_vec();
        shape[axis] = total;

        let data = if axis == 0 {
            let mut data = Vec::with_capacity(shape.iter().product());
            for &v in inputs {
                data.extend_from_slice(self.nodes[v.0].value.data());
            }
            data
        } else {
            // axis == 1, rank 2
            let rows = shape[0];
            let mut data = Vec::with_capacity(shape.iter().product());
            for r in 0..rows {
                for &v in inputs {
                    let t = &self.nodes[v.0].value;
                    let c = t.cols();
                    data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
            }
            data
        };
        let value = Tensor::new(shape, data)?;
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(Op::Concat { inputs: inputs.to_vec(), axis }, value, needs)
    }

    pub fn slice(&mut self, src: Var, axis: usize, offset: usize, len: usize) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let rank = t.rank();
        if axis >= rank || offset + len > t.shape()[axis] || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("axis {axis} [{offset}, {offset}+{len}) of {:?}", t.shape()),
            ));
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let data = if axis == 0 {
            let row: usize = t.shape()[1..].iter().product();
            t.data()[offset * row..(offset + len) * row].to_vec()
        } else {
            let (rows, cols) = (t.rows(), t.cols());
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&t.data()[r * cols + offset..r * cols + offset + len]);
            }
            data
        };
        let value = Tensor::new(shape, data)?;
        let needs = self.needs(src);
        self.push(Op::Slice { src, axis, offset, len }, value, needs)
    }

    /// Split along `axis` into pieces of the given sizes.
    pub fn split(&mut self, src: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if total != self.shape(src)[axis] {
            return Err(Error::shape(
                "split",
                format!("sizes sum {total} != extent {}", self.shape(src)[axis]),
            ));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &len in sizes {
            out.push(self.slice(src, axis, offset, len)?);
            offset += len;
        }
        Ok(out)
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let numel: usize = shape.iter().product();
        if numel != t.numel() || shape.len() > 2 {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", t.shape(), shape),
            ));
        }
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let needs = self.needs(src);
        self.push(Op::Reshape(src), value, needs)
    }

    // ── Row/column reductions and maps ───────────────────────────────────

    fn softmax_like(&mut self, src: Var, axis: Axis, log: bool) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let (rows, cols) = as_2d(t.shape());
        let mut data = vec![S::ZERO; rows * cols];
        // Iterate over the reduced axis with max-subtraction for stability.
        let (outer, inner, ostride, istride) = match axis {
            Axis::Cols => (rows, cols, cols, 1),
            Axis::Rows => (cols, rows, 1, cols),
        };
        for o in 0..outer {
            let mut mx = t.data()[o * ostride];
            for i in 1..inner {
                let v = t.data()[o * ostride + i * istride];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = S::ZERO;
            for i in 0..inner {
                denom += (t.data()[o * ostride + i * istride] - mx).exp();
            }
            if log {
                let lse = denom.ln();
                for i in 0..inner {
                    let idx = o * ostride + i * istride;
                    data[idx] = t.data()[idx] - mx - lse;
                }
            } else {
                for i in 0..inner {
                    let idx = o * ostride + i * istride;
                    data[idx] = (t.data()[idx] - mx).exp() / denom;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(src);
        let op = if log { Op::LogSoftmax { src, axis } } else { Op::Softmax { src, axis } };
        self.push(op, value, needs)
    }

    pub fn softmax(&mut self, src: Var, axis: Axis) -> Result<Var> {
        self.softmax_like(src, axis, false)
    }

    pub fn log_softmax(&mut self, src: Var, axis: Axis) -> Result<Var> {
        self.softmax_like(src, axis, true)
    }

    fn unary(
        &mut self,
        src: Var,
        f: impl Fn(S) -> S,
        make: impl Fn(Var) -> Op<S>,
    ) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())?;
        let needs = self.needs(src);
        self.push(make(src), value, needs)
    }

    pub fn log(&mut self, src: Var) -> Result<Var> {
        self.unary(src, |x| x.ln(), Op::Log)
    }

    pub fn exp(&mut self, src: Var) -> Result<Var> {
        self.unary(src, |x| x.exp(), Op::Exp)
    }

    pub fn sigmoid(&mut self, src: Var) -> Result<Var> {
        self.unary(src, sigmoid_fwd, Op::Sigmoid)
    }

    pub fn tanh(&mut self, src: Var) -> Result<Var> {
        self.unary(src, |x| x.tanh(), Op::Tanh)
    }

    pub fn gelu(&mut self, src: Var) -> Result<Var> {
        self.unary(src, gelu_fwd, Op::Gelu)
    }

    /// Layer normalization over the last axis, with learned gain and bias.
    pub fn layernorm(&mut self, src: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let (rows, cols) = as_2d(t.shape());
        let gshape = self.shape(gamma);
        let bshape = self.shape(beta);
        if gshape != [cols] || bshape != [cols] {
            return Err(Error::shape(
                "layernorm",
                format!("gamma {gshape:?} / beta {bshape:?} vs cols {cols}"),
            ));
        }
        let epss = S::from_f64(eps);
        let n = S::from_f64(cols as f64);
        let g = self.nodes[gamma.0].value.data().to_vec();
        let b = self.nodes[beta.0].value.data().to_vec();
        let mut data = vec![S::ZERO; rows * cols];
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
            let rstd = S::ONE / (var + epss).sqrt();
            for c in 0..cols {
                data[r * cols + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(src) || self.needs(gamma) || self.needs(beta);
        self.push(Op::LayerNorm { src, gamma, beta, eps }, value, needs)
    }

    /// Row lookup: `table[ids[i]]` stacked into an `[ids.len(), d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.rank() != 2 {
            return Err(Error::shape("embedding-lookup", "table must be rank 2"));
        }
        let (v, d) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(Error::shape("embedding-lookup", "empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::data(format!("embedding id {bad} out of vocabulary (size {v})")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::matrix(ids.len(), d, data)?;
        let needs = self.needs(table);
        self.push(Op::Embedding { table, ids: ids.to_vec() }, value, needs)
    }

    /// Keep entries where `mask != 0`, replace the rest with `fill`.
    /// Backward passes zero gradient at filled entries.
    pub fn masked_fill(&mut self, src: Var, mask: &[u8], fill: S) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        if mask.len() != t.numel() {
            return Err(Error::shape(
                "masked-fill",
                format!("mask len {} vs {} elements", mask.len(), t.numel()),
            ));
        }
        let data = t
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m != 0 { x } else { fill })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(src);
        self.push(Op::MaskedFill { src, mask: mask.to_vec() }, value, needs)
    }

    fn reduce_axis(&mut self, src: Var, axis: Axis, mean: bool) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let (rows, cols) = as_2d(t.shape());
        let (out_len, outer, inner, ostride, istride) = match axis {
            Axis::Cols => (rows, rows, cols, cols, 1),
            Axis::Rows => (cols, cols, rows, 1, cols),
        };
        let mut data = vec![S::ZERO; out_len];
        for o in 0..outer {
            let mut acc = S::ZERO;
            for i in 0..inner {
                acc += t.data()[o * ostride + i * istride];
            }
            data[o] = if mean { acc / S::from_f64(inner as f64) } else { acc };
        }
        let value = Tensor::vector(data);
        let needs = self.needs(src);
        let op = if mean { Op::MeanAxis { src, axis } } else { Op::SumAxis { src, axis } };
        self.push(op, value, needs)
    }

    pub fn sum_axis(&mut self, src: Var, axis: Axis) -> Result<Var> {
        self.reduce_axis(src, axis, false)
    }

    pub fn mean_axis(&mut self, src: Var, axis: Axis) -> Result<Var> {
        self.reduce_axis(src, axis, true)
    }

    pub fn sum_all(&mut self, src: Var) -> Result<Var> {
        let acc = self.nodes[src.0].value.data().iter().copied().sum::<S>();
        let needs = self.needs(src);
        self.push(Op::SumAll(src), Tensor::scalar(acc), needs)
    }

    /// `out[r] = src[r, ids[r]]` for a rank-2 input.
    pub fn pick_per_row(&mut self, src: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        if t.rank() != 2 || ids.len() != t.rows() {
            return Err(Error::shape(
                "pick-per-row",
                format!("{:?} with {} ids", t.shape(), ids.len()),
            ));
        }
        let cols = t.cols();
        if let Some(&bad) = ids.iter().find(|&&id| id >= cols) {
            return Err(Error::data(format!("pick id {bad} out of range (cols {cols})")));
        }
        let data = ids.iter().enumerate().map(|(r, &c)| t.get2(r, c)).collect();
        let value = Tensor::vector(data);
        let needs = self.needs(src);
        self.push(Op::PickPerRow { src, ids: ids.to_vec() }, value, needs)
    }

    /// Row-wise cosine similarity between two equal-shape matrices (or two
    /// vectors, treated as single rows). Zero-norm rows are a numeric error.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "cosine-similarity",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let (rows, cols) = as_2d(va.shape());
        let mut data = vec![S::ZERO; rows];
        for r in 0..rows {
            let xa = &va.data()[r * cols..(r + 1) * cols];
            let xb = &vb.data()[r * cols..(r + 1) * cols];
            let na = xa.iter().map(|&x| x * x).sum::<S>().sqrt();
            let nb = xb.iter().map(|&x| x * x).sum::<S>().sqrt();
            if na == S::ZERO || nb == S::ZERO {
                return Err(Error::numeric("cosine-similarity", format!("zero-norm row {r}")));
            }
            let dot = xa.iter().zip(xb).map(|(&x, &y)| x * y).sum::<S>();
            data[r] = dot / (na * nb);
        }
        let value = Tensor::vector(data);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::CosineSim(a, b), value, needs)
    }

    /// L2-normalize each row. Zero-norm rows are a numeric error.
    pub fn normalize_rows(&mut self, src: Var) -> Result<Var> {
        let t = &self.nodes[src.0].value;
        let (rows, cols) = as_2d(t.shape());
        let mut data = vec![S::ZERO; rows * cols];
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
            if norm == S::ZERO {
                return Err(Error::numeric("normalize-rows", format!("zero-norm row {r}")));
            }
            for c in 0..cols {
                data[r * cols + c] = row[c] / norm;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(src);
        self.push(Op::NormalizeRows(src), value, needs)
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients from any previous sweep
    /// on this graph are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(S::ONE));

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            self.backward_node(idx, &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[S]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(t) => {
                for (acc, &d) in t.data_mut().iter_mut().zip(delta) {
                    *acc += d;
                }
            }
            None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                self.grads[v.0] =
                    Some(Tensor::new(shape, delta.to_vec()).expect("gradient shape"));
            }
        }
    }

    /// Accumulate into a (possibly broadcast) rhs operand: sum the upstream
    /// gradient over the leading axes the rhs was broadcast across.
    fn accumulate_broadcast(&mut self, v: Var, upstream: &[S]) {
        let bn = self.nodes[v.0].value.numel();
        if bn == upstream.len() {
            self.accumulate(v, upstream);
        } else {
            let mut folded = vec![S::ZERO; bn];
            for (i, &g) in upstream.iter().enumerate() {
                folded[i % bn] += g;
            }
            self.accumulate(v, &folded);
        }
    }

    fn backward_node(&mut self, idx: usize, g: &Tensor<S>) -> Result<()> {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf | Op::Detach => {}
            Op::Add(a, b) => {
                self.accumulate(a, g.data());
                self.accumulate_broadcast(b, g.data());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.data());
                let neg: Vec<S> = g.data().iter().map(|&x| -x).collect();
                self.accumulate_broadcast(b, &neg);
            }
            Op::Mul(a, b) => {
                let (bd, bn) = (self.nodes[b.0].value.data().to_vec(), self.nodes[b.0].value.numel());
                let ad = self.nodes[a.0].value.data().to_vec();
                let da: Vec<S> =
                    g.data().iter().enumerate().map(|(i, &gi)| gi * bd[i % bn]).collect();
                self.accumulate(a, &da);
                let db: Vec<S> = g.data().iter().zip(ad.iter()).map(|(&gi, &ai)| gi * ai).collect();
                self.accumulate_broadcast(b, &db);
            }
            Op::Div(a, b) => {
                let (bd, bn) = (self.nodes[b.0].value.data().to_vec(), self.nodes[b.0].value.numel());
                let ad = self.nodes[a.0].value.data().to_vec();
                let da: Vec<S> =
                    g.data().iter().enumerate().map(|(i, &gi)| gi / bd[i % bn]).collect();
                self.accumulate(a, &da);
                let db: Vec<S> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let bv = bd[i % bn];
                        -gi * ad[i] / (bv * bv)
                    })
                    .collect();
                self.accumulate_broadcast(b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<S> = g.data().iter().map(|&x| x * c).collect();
                self.accumulate(a, &da);
            }
            Op::Matmul(a, b) => {
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].needs_grad {
                    // dA = dC · B^T
                    let bt = transpose_plain(vb.data(), k, n);
                    let mut da = vec![S::ZERO; m * k];
                    matmul_plain(g.data(), &bt, m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = A^T · dC
                    let at = transpose_plain(va.data(), m, k);
                    let mut db = vec![S::ZERO; k * n];
                    matmul_plain(&at, g.data(), k, m, n, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                let da = transpose_plain(g.data(), r, c);
                self.accumulate(a, &da);
            }
            Op::Concat { inputs, axis } => {
                if axis == 0 {
                    let mut offset = 0;
                    for &v in &inputs {
                        let n = self.nodes[v.0].value.numel();
                        let da = g.data()[offset..offset + n].to_vec();
                        self.accumulate(v, &da);
                        offset += n;
                    }
                } else {
                    let rows = self.nodes[idx].value.rows();
                    let out_cols = self.nodes[idx].value.cols();
                    let mut col0 = 0;
                    for &v in &inputs {
                        let c = self.nodes[v.0].value.cols();
                        let mut da = vec![S::ZERO; rows * c];
                        for r in 0..rows {
                            da[r * c..(r + 1) * c].copy_from_slice(
                                &g.data()[r * out_cols + col0..r * out_cols + col0 + c],
                            );
                        }
                        self.accumulate(v, &da);
                        col0 += c;
                    }
                }
            }
            Op::Slice { src, axis, offset, len } => {
                let t = self.nodes[src.0].value.shape().to_vec();
                let mut da = vec![S::ZERO; self.nodes[src.0].value.numel()];
                if axis == 0 {
                    let row: usize = t[1..].iter().product::<usize>().max(1);
                    da[offset * row..(offset + len) * row].copy_from_slice(g.data());
                } else {
                    let cols = t[1];
                    let rows = t[0];
                    for r in 0..rows {
                        da[r * cols + offset..r * cols + offset + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                }
                self.accumulate(src, &da);
            }
            Op::Softmax { src, axis } => {
                let y = self.nodes[idx].value.clone();
                let (rows, cols) = as_2d(y.shape());
                let (outer, inner, ostride, istride) = match axis {
                    Axis::Cols => (rows, cols, cols, 1),
                    Axis::Rows => (cols, rows, 1, cols),
                };
                let mut da = vec![S::ZERO; y.numel()];
                for o in 0..outer {
                    let mut dot = S::ZERO;
                    for i in 0..inner {
                        let idx2 = o * ostride + i * istride;
                        dot += g.data()[idx2] * y.data()[idx2];
                    }
                    for i in 0..inner {
                        let idx2 = o * ostride + i * istride;
                        da[idx2] = (g.data()[idx2] - dot) * y.data()[idx2];
                    }
                }
                self.accumulate(src, &da);
            }
            Op::LogSoftmax { src, axis } => {
                let y = self.nodes[idx].value.clone();
                let (rows, cols) = as_2d(y.shape());
                let (outer, inner, ostride, istride) = match axis {
                    Axis::Cols => (rows, cols, cols, 1),
                    Axis::Rows => (cols, rows, 1, cols),
                };
                let mut da = vec![S::ZERO; y.numel()];
                for o in 0..outer {
                    let mut gsum = S::ZERO;
                    for i in 0..inner {
                        gsum += g.data()[o * ostride + i * istride];
                    }
                    for i in 0..inner {
                        let idx2 = o * ostride + i * istride;
                        da[idx2] = g.data()[idx2] - y.data()[idx2].exp() * gsum;
                    }
                }
                self.accumulate(src, &da);
            }
            Op::Log(a) => {
                let x = self.nodes[a.0].value.data().to_vec();
                let da: Vec<S> = g.data().iter().zip(x.iter()).map(|(&gi, &xi)| gi / xi).collect();
                self.accumulate(a, &da);
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                let da: Vec<S> = g.data().iter().zip(y.iter()).map(|(&gi, &yi)| gi * yi).collect();
                self.accumulate(a, &da);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                let da: Vec<S> = g
                    .data()
                    .iter()
                    .zip(y.iter())
                    .map(|(&gi, &yi)| gi * yi * (S::ONE - yi))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                let da: Vec<S> = g
                    .data()
                    .iter()
                    .zip(y.iter())
                    .map(|(&gi, &yi)| gi * (S::ONE - yi * yi))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Gelu(a) => {
                let x = self.nodes[a.0].value.data().to_vec();
                let da: Vec<S> =
                    g.data().iter().zip(x.iter()).map(|(&gi, &xi)| gi * gelu_bwd(xi)).collect();
                self.accumulate(a, &da);
            }
            Op::LayerNorm { src, gamma, beta, eps } => {
                let x = self.nodes[src.0].value.clone();
                let (rows, cols) = as_2d(x.shape());
                let n = S::from_f64(cols as f64);
                let epss = S::from_f64(eps);
                let gm = self.nodes[gamma.0].value.data().to_vec();
                let mut dx = vec![S::ZERO; x.numel()];
                let mut dgamma = vec![S::ZERO; cols];
                let mut dbeta = vec![S::ZERO; cols];
                for r in 0..rows {
                    let row = &x.data()[r * cols..(r + 1) * cols];
                    let grow = &g.data()[r * cols..(r + 1) * cols];
                    let mean = row.iter().copied().sum::<S>() / n;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
                    let rstd = S::ONE / (var + epss).sqrt();
                    // xh = normalized input; dxh = gradient w.r.t. it
                    let mut sum_dxh = S::ZERO;
                    let mut sum_dxh_xh = S::ZERO;
                    for c in 0..cols {
                        let xh = (row[c] - mean) * rstd;
                        let dxh = grow[c] * gm[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        dgamma[c] += grow[c] * xh;
                        dbeta[c] += grow[c];
                    }
                    for c in 0..cols {
                        let xh = (row[c] - mean) * rstd;
                        let dxh = grow[c] * gm[c];
                        dx[r * cols + c] = (dxh - sum_dxh / n - xh * sum_dxh_xh / n) * rstd;
                    }
                }
                self.accumulate(src, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            Op::Embedding { table, ids } => {
                let d = self.nodes[idx].value.cols();
                let mut dt = vec![S::ZERO; self.nodes[table.0].value.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[id * d + c] += g.data()[r * d + c];
                    }
                }
                self.accumulate(table, &dt);
            }
            Op::MaskedFill { src, mask } => {
                let da: Vec<S> = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(&gi, &m)| if m != 0 { gi } else { S::ZERO })
                    .collect();
                self.accumulate(src, &da);
            }
            Op::SumAxis { src, axis } | Op::MeanAxis { src, axis } => {
                let mean = matches!(self.nodes[idx].op, Op::MeanAxis { .. });
                let shape = self.nodes[src.0].value.shape().to_vec();
                let (rows, cols) = as_2d(&shape);
                let (outer, inner, ostride, istride) = match axis {
                    Axis::Cols => (rows, cols, cols, 1),
                    Axis::Rows => (cols, rows, 1, cols),
                };
                let scale =
                    if mean { S::ONE / S::from_f64(inner as f64) } else { S::ONE };
                let mut da = vec![S::ZERO; rows * cols];
                for o in 0..outer {
                    let go = g.data()[o] * scale;
                    for i in 0..inner {
                        da[o * ostride + i * istride] = go;
                    }
                }
                self.accumulate(src, &da);
            }
            Op::SumAll(src) => {
                let da = vec![g.data()[0]; self.nodes[src.0].value.numel()];
                self.accumulate(src, &da);
            }
            Op::Reshape(src) => {
                self.accumulate(src, g.data());
            }
            Op::PickPerRow { src, ids } => {
                let cols = self.nodes[src.0].value.cols();
                let mut da = vec![S::ZERO; self.nodes[src.0].value.numel()];
                for (r, &c) in ids.iter().enumerate() {
                    da[r * cols + c] += g.data()[r];
                }
                self.accumulate(src, &da);
            }
            Op::CosineSim(a, b) => {
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let (rows, cols) = as_2d(va.shape());
                let y = self.nodes[idx].value.data().to_vec();
                let mut da = vec![S::ZERO; va.numel()];
                let mut db = vec![S::ZERO; vb.numel()];
                for r in 0..rows {
                    let xa = &va.data()[r * cols..(r + 1) * cols];
                    let xb = &vb.data()[r * cols..(r + 1) * cols];
                    let na = xa.iter().map(|&x| x * x).sum::<S>().sqrt();
                    let nb = xb.iter().map(|&x| x * x).sum::<S>().sqrt();
                    let gr = g.data()[r];
                    let cos = y[r];
                    for c in 0..cols {
                        // d cos / d a = (b_hat - cos * a_hat) / |a|
                        da[r * cols + c] = gr * (xb[c] / (na * nb) - cos * xa[c] / (na * na));
                        db[r * cols + c] = gr * (xa[c] / (na * nb) - cos * xb[c] / (nb * nb));
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::NormalizeRows(src) => {
                let x = self.nodes[src.0].value.clone();
                let y = self.nodes[idx].value.clone();
                let (rows, cols) = as_2d(x.shape());
                let mut da = vec![S::ZERO; x.numel()];
                for r in 0..rows {
                    let xr = &x.data()[r * cols..(r + 1) * cols];
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let norm = xr.iter().map(|&v| v * v).sum::<S>().sqrt();
                    let dot = gr.iter().zip(yr.iter()).map(|(&gi, &yi)| gi * yi).sum::<S>();
                    for c in 0..cols {
                        da[r * cols + c] = (gr[c] - dot * yr[c]) / norm;
                    }
                }
                self.accumulate(src, &da);
            }
        }
        Ok(())
    }
}

fn sigmoid_fwd<S: Scalar>(x: S) -> S {
    // Stable in both tails.
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

// GELU, tanh approximation.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_fwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (S::ONE + u.tanh())
}

fn gelu_bwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (S::ONE + three * a * x * x);
    half * (S::ONE + t) + half * x * (S::ONE - t * t) * du
}
