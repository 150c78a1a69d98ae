//! Reverse-mode tape. Nodes are appended in evaluation order, so the node index is a
//! topological order and the backward sweep simply walks it in reverse.

use std::sync::Arc;

use rand::Rng;

use super::{matmul_into, Grads, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Param(ParamId),
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gather { src: Var, ids: Vec<Option<usize>> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    CodeGather { x: Var, codes: Arc<Vec<u8>> },
    CodeAggregate { alpha: Var, codes: Arc<Vec<u8>> },
    Sum(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

/// Records a forward computation over a read-only parameter store.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    /// The node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("mul_row", ta, tr));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tr.data()) {
                *o *= b;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    /// Row-wise softmax. Entries where `mask` is false get probability exactly 0.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(TensorError::DataLength {
                    len: m.len(),
                    shape: ta.shape(),
                });
            }
        }
        let mut out = Tensor::zeros(ta.rows(), ta.cols());
        for r in 0..ta.rows() {
            let keep = |c: usize| mask.is_none_or(|m| m[r * ta.cols() + c]);
            let row = ta.row(r);
            let max = (0..ta.cols())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMaskedRow { row: r });
            }
            let o = out.row_mut(r);
            let mut z = 0.0;
            for c in 0..row.len() {
                if keep(c) {
                    o[c] = (row[c] - max).exp();
                    z += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.rows(), ta.cols());
        let mut inv_std = Vec::with_capacity(ta.rows());
        let n = ta.cols() as f64;
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x: a, inv_std })
    }

    /// Row lookup: output row `i` is `src[ids[i]]`, or zeros for `None`.
    pub fn gather_rows(&mut self, src: Var, ids: &[Option<usize>]) -> Result<Var, TensorError> {
        let ts = self.value(src);
        let mut out = Tensor::zeros(ids.len(), ts.cols());
        for (i, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= ts.rows() {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_rows",
                        index: id,
                        bound: ts.rows(),
                    });
                }
                out.row_mut(i).copy_from_slice(ts.row(id));
            }
        }
        Ok(self.push(
            out,
            Op::Gather {
                src,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let ids: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
        self.gather_rows(src, &ids)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), t));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if start + len > t.cols() {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: t.cols(),
            });
        }
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// `out[i][j] = x[i][codes[i·n + j]]` for an `n × k` input and `n × n` codes.
    pub fn code_gather(&mut self, x: Var, codes: &Arc<Vec<u8>>) -> Result<Var, TensorError> {
        let t = self.value(x);
        let n = t.rows();
        if codes.len() != n * n {
            return Err(TensorError::DataLength {
                len: codes.len(),
                shape: [n, n],
            });
        }
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let c = codes[i * n + j] as usize;
                if c >= t.cols() {
                    return Err(TensorError::IndexOutOfRange {
                        op: "code_gather",
                        index: c,
                        bound: t.cols(),
                    });
                }
                out.set(i, j, t.get(i, c));
            }
        }
        Ok(self.push(
            out,
            Op::CodeGather {
                x,
                codes: Arc::clone(codes),
            },
        ))
    }

    /// `out[i][c] = Σ_j alpha[i][j] · [codes[i·n + j] == c]`, an `n × k` result.
    pub fn code_aggregate(&mut self, alpha: Var, codes: &Arc<Vec<u8>>, k: usize) -> Result<Var, TensorError> {
        let t = self.value(alpha);
        let n = t.rows();
        if t.cols() != n || codes.len() != n * n {
            return Err(TensorError::DataLength {
                len: codes.len(),
                shape: t.shape(),
            });
        }
        let mut out = Tensor::zeros(n, k);
        for i in 0..n {
            for j in 0..n {
                let c = codes[i * n + j] as usize;
                if c >= k {
                    return Err(TensorError::IndexOutOfRange {
                        op: "code_aggregate",
                        index: c,
                        bound: k,
                    });
                }
                out.row_mut(i)[c] += t.get(i, j);
            }
        }
        Ok(self.push(
            out,
            Op::CodeAggregate {
                alpha,
                codes: Arc::clone(codes),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Negative log-probability of `target` under a masked softmax over a `1 × K` row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if t.rows() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: t.shape(),
                right: [1, t.cols()],
            });
        }
        if target >= t.cols() || mask.is_some_and(|m| !m[target]) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                bound: t.cols(),
            });
        }
        let keep = |c: usize| mask.is_none_or(|m| m[c]);
        let row = t.row(0);
        let max = (0..row.len())
            .filter(|&c| keep(c))
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..row.len()).filter(|&c| keep(c)).map(|c| (row[c] - max).exp()).sum();
        let log_z = max + z.ln();
        let probs: Vec<f64> = (0..row.len())
            .map(|c| if keep(c) { (row[c] - log_z).exp() } else { 0.0 })
            .collect();
        let loss = log_z - row[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }))
    }

    /// Inverted dropout; identity when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let t = self.value(x);
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data).expect("same length");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<NodeGrads, TensorError> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(NodeGrads { grads })
    }

    /// Runs backward and adds parameter gradients into `into`.
    pub fn backward_into(&self, loss: Var, into: &mut Grads) -> Result<(), TensorError> {
        let ng = self.backward(loss)?;
        for (id, v) in self.param_nodes.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = &ng.grads[v.0] {
                    into.get_mut(ParamId(id)).add_assign(g);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Param(_) | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // da = g · bᵀ
                let mut ga = Tensor::zeros(m, k);
                matmul_into(g.data(), tb.transpose().data(), ga.data_mut(), m, n, k);
                accumulate(grads, *a, ga);
                // db = aᵀ · g
                let mut gb = Tensor::zeros(k, n);
                matmul_into(ta.transpose().data(), g.data(), gb.data_mut(), k, m, n);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, col_sums(g));
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(*a), self.value(*row));
                let mut ga = g.clone();
                let mut prod = g.clone();
                for r in 0..g.rows() {
                    for (c, v) in ga.row_mut(r).iter_mut().enumerate() {
                        *v *= tr.data()[c];
                    }
                    for (v, x) in prod.row_mut(r).iter_mut().zip(ta.row(r)) {
                        *v *= x;
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *row, col_sums(&prod));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip_map(g, tb, |g, y| g * y));
                accumulate(grads, *b, zip_map(g, ta, |g, x| g * x));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out.unwrap(), |g, y| g * (1.0 - y * y))),
            Op::Relu(a) => accumulate(grads, *a, zip_map(g, out.unwrap(), |g, y| if y > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out.unwrap(), |g, y| g * y * (1.0 - y))),
            Op::Softmax(a) => {
                let y = out.unwrap();
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = out.unwrap();
                let n = y.cols() as f64;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let mean_g = g.row(r).iter().sum::<f64>() / n;
                    let mean_gy = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Gather { src, ids } => {
                let ts = self.value(*src);
                let mut gs = Tensor::zeros(ts.rows(), ts.cols());
                for (i, id) in ids.iter().enumerate() {
                    if let Some(id) = *id {
                        for (o, v) in gs.row_mut(id).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                accumulate(grads, *src, gs);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    off += cols;
                    accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let cols = g.cols();
                    let data = g.data()[off * cols..(off + rows) * cols].to_vec();
                    off += rows;
                    accumulate(grads, p, Tensor::from_vec(rows, cols, data).expect("slice"));
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::CodeGather { x, codes } => {
                let tx = self.value(*x);
                let n = tx.rows();
                let mut gx = Tensor::zeros(n, tx.cols());
                for i in 0..n {
                    for j in 0..n {
                        let c = codes[i * n + j] as usize;
                        gx.row_mut(i)[c] += g.get(i, j);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::CodeAggregate { alpha, codes } => {
                let n = g.rows();
                let mut ga = Tensor::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        ga.set(i, j, g.get(i, codes[i * n + j] as usize));
                    }
                }
                accumulate(grads, *alpha, ga);
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                accumulate(grads, *x, Tensor::filled(tx.rows(), tx.cols(), g.item()));
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut gl = probs.clone();
                gl[*target] -= 1.0;
                let s = g.item();
                accumulate(grads, *logits, Tensor::row_vector(gl.into_iter().map(|v| v * s).collect()));
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(grads, *x, Tensor::from_vec(g.rows(), g.cols(), data).expect("same length"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Per-node gradients from one backward sweep.
pub struct NodeGrads {
    grads: Vec<Option<Tensor>>,
}

impl NodeGrads {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
