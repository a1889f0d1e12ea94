//! Reverse-mode differentiation over a linear tape.
//!
//! Each operation appends a node holding its forward value and the indices of
//! its inputs. [`Tape::backward`] walks the tape in reverse and returns the
//! gradient of a scalar root with respect to every leaf that asked for one.
//! Nodes that do not depend on such a leaf are skipped entirely.

use std::sync::Arc;

use rand::Rng as _;

use super::rng::Rng;
use super::tensor::{gemm, MatView, Tensor};
use crate::error::{Error, Result};

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
    MatMul { a: usize, b: usize, b_transposed: bool },
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    RowSoftmax(usize),
    Transpose(usize),
    GatherRows(usize, Arc<[usize]>),
    SegmentSoftmax(usize, Arc<[usize]>),
    SegmentSum(usize, Arc<[usize]>),
    ConcatCols(Vec<usize>),
    Dropout(usize, Vec<f64>),
    SumAll(usize),
    CrossEntropy(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the variable does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape2(rows: usize, cols: usize) -> Vec<usize> {
    vec![rows, cols]
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(MatView::of(self.value(a)), MatView::of(self.value(b)), &mut out, false);
        let value = Tensor::from_vec(&shape2(m, n), out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                b_transposed: false,
            },
            &[a.0, b.0],
        ))
    }

    /// `a · bᵀ`, the layout used for `(out, in)` weight matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::shape(format!("matmul_t {m}x{k} by ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatView::of(self.value(a)),
            MatView::of(self.value(b)).t(),
            &mut out,
            false,
        );
        let value = Tensor::from_vec(&shape2(m, n), out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                b_transposed: true,
            },
            &[a.0, b.0],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(format!("add {:?} + {:?}", self.dims(a), self.dims(b))));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds a `1 x c` (or rank-1 `[c]`) row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let ((r, c), (r2, c2)) = (self.dims(x), self.dims(row));
        if r2 != 1 || c2 != c {
            return Err(Error::shape(format!("add_row {r}x{c} + {r2}x{c2}")));
        }
        let mut value = self.value(x).clone();
        let b = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_exact_mut(c.max(1)) {
            for (v, bb) in chunk.iter_mut().zip(&b) {
                *v += bb;
            }
        }
        Ok(self.push(value, Op::AddRow(x.0, row.0), &[x.0, row.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(format!("mul {:?} * {:?}", self.dims(a), self.dims(b))));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a.0, s), &[a.0])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.0), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a.0), &[a.0])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0), &[a.0])
    }

    /// Softmax along each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = x.data().to_vec();
        if c > 0 {
            for row in out.chunks_exact_mut(c) {
                softmax_in_place(row);
            }
        }
        let value = Tensor::from_vec(x.shape(), out).expect("same shape");
        self.push(value, Op::RowSoftmax(a.0), &[a.0])
    }

    /// `out[e] = a[index[e]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!("gather index {bad} out of {r} rows")));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::from_vec(&shape2(index.len(), c), out)?;
        Ok(self.push(value, Op::GatherRows(a.0, index), &[a.0]))
    }

    fn check_segments(&self, a: Var, offsets: &[usize]) -> Result<()> {
        let rows = self.dims(a).0;
        if offsets.first() != Some(&0) || offsets.last() != Some(&rows) || offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::shape(format!("segment offsets must rise from 0 to {rows}")));
        }
        Ok(())
    }

    /// Column-wise softmax within each row segment `offsets[i]..offsets[i+1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        self.check_segments(a, &offsets)?;
        let x = self.value(a);
        let c = x.cols();
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        let mut max = vec![0.0; c];
        let mut sum = vec![0.0; c];
        for seg in offsets.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            if lo == hi {
                continue;
            }
            max.fill(f64::NEG_INFINITY);
            for e in lo..hi {
                for (m, &v) in max.iter_mut().zip(&src[e * c..(e + 1) * c]) {
                    *m = m.max(v);
                }
            }
            sum.fill(0.0);
            for e in lo..hi {
                let row = &mut out[e * c..(e + 1) * c];
                for j in 0..c {
                    let v = (src[e * c + j] - max[j]).exp();
                    row[j] = v;
                    sum[j] += v;
                }
            }
            for e in lo..hi {
                for (v, s) in out[e * c..(e + 1) * c].iter_mut().zip(&sum) {
                    *v /= s;
                }
            }
        }
        let value = Tensor::from_vec(x.shape(), out)?;
        Ok(self.push(value, Op::SegmentSoftmax(a.0, offsets), &[a.0]))
    }

    /// Row sums over each segment; an empty segment yields a zero row.
    pub fn segment_sum(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        self.check_segments(a, &offsets)?;
        let x = self.value(a);
        let c = x.cols();
        let src = x.data();
        let segs = offsets.len() - 1;
        let mut out = vec![0.0; segs * c];
        for (i, seg) in offsets.windows(2).enumerate() {
            let dst = &mut out[i * c..(i + 1) * c];
            for e in seg[0]..seg[1] {
                for (d, s) in dst.iter_mut().zip(&src[e * c..(e + 1) * c]) {
                    *d += s;
                }
            }
        }
        let value = Tensor::from_vec(&shape2(segs, c), out)?;
        Ok(self.push(value, Op::SegmentSum(a.0, offsets), &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat of nothing"));
        };
        let rows = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::shape("concat_cols row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::from_vec(&shape2(rows, total), out)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(value, Op::ConcatCols(idx.clone()), &idx))
    }

    /// Inverted dropout. `p == 0` returns `a` itself.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Dropout(a.0, mask), &[a.0]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0), &[a.0])
    }

    /// `-log softmax(logits)[label]` for a single `1 x C` row, computed with
    /// log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if r != 1 {
            return Err(Error::shape(format!("cross_entropy expects one row, got {r}")));
        }
        if label >= c {
            return Err(Error::invalid(format!("label {label} out of range for {c} classes")));
        }
        let loss = cross_entropy(self.value(logits).data(), label);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits.0, label), &[logits.0]))
    }

    /// Gradients of the scalar `root` with respect to every [`Tape::param`] leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape("backward needs a scalar root"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, g, &mut grads);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !(matches!(n.op, Op::Leaf) && n.needs_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, b_transposed } => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                let gv = MatView::of(&g);
                if self.wants(a) {
                    let mut da = vec![0.0; av.len()];
                    let bview = if b_transposed {
                        MatView::of(bv)
                    } else {
                        MatView::of(bv).t()
                    };
                    gemm(gv, bview, &mut da, false);
                    accumulate(grads, a, Tensor::from_vec(av.shape(), da).unwrap());
                }
                if self.wants(b) {
                    let mut db = vec![0.0; bv.len()];
                    if b_transposed {
                        gemm(gv.t(), MatView::of(av), &mut db, false);
                    } else {
                        gemm(MatView::of(av).t(), gv, &mut db, false);
                    }
                    accumulate(grads, b, Tensor::from_vec(bv.shape(), db).unwrap());
                }
            }
            &Op::Add(a, b) => {
                if self.wants(b) {
                    accumulate(grads, b, g.clone());
                }
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
            }
            &Op::AddRow(x, row) => {
                if self.wants(row) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for r in g.data().chunks_exact(c.max(1)) {
                        for (d, v) in db.iter_mut().zip(r) {
                            *d += v;
                        }
                    }
                    let shape = self.nodes[row].value.shape();
                    accumulate(grads, row, Tensor::from_vec(shape, db).unwrap());
                }
                if self.wants(x) {
                    accumulate(grads, x, g);
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.wants(a) {
                    accumulate(grads, a, zip_map(&g, bv, |g, b| g * b));
                }
                if self.wants(b) {
                    accumulate(grads, b, zip_map(&g, av, |g, a| g * a));
                }
            }
            &Op::Scale(a, s) => accumulate(grads, a, g.map(|v| v * s)),
            &Op::AddScalar(a) => accumulate(grads, a, g),
            &Op::Relu(a) => {
                let x = &self.nodes[a].value;
                accumulate(grads, a, zip_map(&g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            &Op::Tanh(a) => accumulate(grads, a, zip_map(&g, y, |g, y| g * (1.0 - y * y))),
            &Op::Sigmoid(a) => accumulate(grads, a, zip_map(&g, y, |g, y| g * y * (1.0 - y))),
            &Op::Exp(a) => accumulate(grads, a, zip_map(&g, y, |g, y| g * y)),
            &Op::RowSoftmax(a) => {
                let c = y.cols();
                let mut dx = vec![0.0; y.len()];
                if c > 0 {
                    for ((dr, yr), gr) in dx
                        .chunks_exact_mut(c)
                        .zip(y.data().chunks_exact(c))
                        .zip(g.data().chunks_exact(c))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                accumulate(grads, a, Tensor::from_vec(y.shape(), dx).unwrap());
            }
            &Op::Transpose(a) => {
                let shape = self.nodes[a].value.shape().to_vec();
                let t = g.transpose();
                accumulate(grads, a, Tensor::from_vec(&shape, t.into_data()).unwrap());
            }
            Op::GatherRows(a, index) => {
                let src = &self.nodes[*a].value;
                let c = src.cols();
                let mut dx = vec![0.0; src.len()];
                for (e, &i) in index.iter().enumerate() {
                    for (d, v) in dx[i * c..(i + 1) * c].iter_mut().zip(&g.data()[e * c..(e + 1) * c]) {
                        *d += v;
                    }
                }
                accumulate(grads, *a, Tensor::from_vec(src.shape(), dx).unwrap());
            }
            Op::SegmentSoftmax(a, offsets) => {
                let c = y.cols();
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![0.0; y.len()];
                let mut dot = vec![0.0; c];
                for seg in offsets.windows(2) {
                    dot.fill(0.0);
                    for e in seg[0]..seg[1] {
                        for j in 0..c {
                            dot[j] += yd[e * c + j] * gd[e * c + j];
                        }
                    }
                    for e in seg[0]..seg[1] {
                        for j in 0..c {
                            dx[e * c + j] = yd[e * c + j] * (gd[e * c + j] - dot[j]);
                        }
                    }
                }
                accumulate(grads, *a, Tensor::from_vec(y.shape(), dx).unwrap());
            }
            Op::SegmentSum(a, offsets) => {
                let src = &self.nodes[*a].value;
                let c = src.cols();
                let mut dx = vec![0.0; src.len()];
                for (i, seg) in offsets.windows(2).enumerate() {
                    let gi = &g.data()[i * c..(i + 1) * c];
                    for e in seg[0]..seg[1] {
                        dx[e * c..(e + 1) * c].copy_from_slice(gi);
                    }
                }
                accumulate(grads, *a, Tensor::from_vec(src.shape(), dx).unwrap());
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut col = 0;
                for &p in parts {
                    let pv = &self.nodes[p].value;
                    let w = pv.cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + col..r * total + col + w]);
                        }
                        accumulate(grads, p, Tensor::from_vec(pv.shape(), dp).unwrap());
                    }
                    col += w;
                }
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *a, Tensor::from_vec(g.shape(), data).unwrap());
            }
            &Op::SumAll(a) => {
                let shape = self.nodes[a].value.shape();
                accumulate(grads, a, Tensor::full(shape, g.data()[0]));
            }
            &Op::CrossEntropy(a, label) => {
                let logits = &self.nodes[a].value;
                let scale = g.data()[0];
                let mut p = logits.data().to_vec();
                softmax_in_place(&mut p);
                p[label] -= 1.0;
                for v in &mut p {
                    *v *= scale;
                }
                accumulate(grads, a, Tensor::from_vec(logits.shape(), p).unwrap());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Stable `logsumexp(logits) - logits[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    (lse - logits[label]).max(0.0)
}
