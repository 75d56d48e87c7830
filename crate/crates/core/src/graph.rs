//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a 1×1 node walks the record in reverse and
//! accumulates adjoints for every node that depends on a trainable leaf.
//! Constants never receive gradients.
//!
//! The gradient-reversal node is the one place where the backward pass is
//! not the derivative of the forward pass: forward it copies its input,
//! backward it multiplies the incoming adjoint by `-lambda` (or passes it
//! through unchanged when reversal is disabled on the graph).

use crate::tensor::Matrix;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    /// `a ⊙ b` where `b` is a single row broadcast over the rows of `a`.
    MulRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    Transpose(Var),
    Sum(Var),
    Reshape(Var),
    Block {
        src: Var,
        r0: usize,
        c0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// Pairwise squared euclidean distances between the rows of two matrices.
    SqDist(Var, Var),
    GradReverse(Var, f64),
}

/// Per-node adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if `v` does not influence the loss through
    /// any differentiable path.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, with zeros when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Matrix>,
    ops: Vec<Op>,
    tracked: Vec<bool>,
    reversal: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self {
            reversal: true,
            ..Self::default()
        }
    }

    /// Enables or disables the sign flip of gradient-reversal nodes. The
    /// forward pass is unaffected.
    pub fn set_reversal(&mut self, enabled: bool) {
        self.reversal = enabled;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0].item()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.tracked.push(tracked);
        Var(self.values.len() - 1)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.tracked[v.0])
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].matmul(&self.values[b.0]);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::MatMul(a, b), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Add(a, b), t)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ra, ca) = self.shape(a);
        assert_eq!(self.shape(row), (1, ca), "add_row expects a 1x{ca} row");
        let mut v = self.values[a.0].clone();
        let r = self.values[row.0].as_slice().to_vec();
        for i in 0..ra {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let t = self.any_tracked(&[a, row]);
        self.push(v, Op::AddRow(a, row), t)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (ra, ca) = self.shape(a);
        assert_eq!(self.shape(row), (1, ca), "mul_row expects a 1x{ca} row");
        let mut v = self.values[a.0].clone();
        let r = self.values[row.0].as_slice().to_vec();
        for i in 0..ra {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x *= b;
            }
        }
        let t = self.any_tracked(&[a, row]);
        self.push(v, Op::MulRow(a, row), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].map(|x| x * c);
        let t = self.tracked[a.0];
        self.push(v, Op::Scale(a, c), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].map(|x| x + c);
        let t = self.tracked[a.0];
        self.push(v, Op::AddScalar(a), t)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(|x| x * sigmoid(x));
        let t = self.tracked[a.0];
        self.push(v, Op::Silu(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(sigmoid);
        let t = self.tracked[a.0];
        self.push(v, Op::Sigmoid(a), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::exp);
        let t = self.tracked[a.0];
        self.push(v, Op::Exp(a), t)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::ln);
        let t = self.tracked[a.0];
        self.push(v, Op::Log(a), t)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.values[a.0].map(f64::abs);
        let t = self.tracked[a.0];
        self.push(v, Op::Abs(a), t)
    }

    /// Elementwise clamp. The gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.values[a.0].map(|x| x.clamp(lo, hi));
        let t = self.tracked[a.0];
        self.push(v, Op::Clamp(a, lo, hi), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = &self.values[a.0];
        let mut v = src.clone();
        for i in 0..v.rows() {
            softmax_in_place(v.row_mut(i));
        }
        let t = self.tracked[a.0];
        self.push(v, Op::SoftmaxRows(a), t)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.values[a.0].transpose();
        let t = self.tracked[a.0];
        self.push(v, Op::Transpose(a), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.values[a.0].sum());
        let t = self.tracked[a.0];
        self.push(v, Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.values[a.0].clone().reshaped(rows, cols);
        let t = self.tracked[a.0];
        self.push(v, Op::Reshape(a), t)
    }

    pub fn block(&mut self, a: Var, r0: usize, c0: usize, rows: usize, cols: usize) -> Var {
        let v = self.values[a.0].block(r0, c0, rows, cols);
        let t = self.tracked[a.0];
        self.push(v, Op::Block { src: a, r0, c0 }, t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            let m = &self.values[p.0];
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            v.add_block(0, c0, m);
            c0 += m.cols();
        }
        let t = self.any_tracked(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = &self.values[p.0];
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let t = self.any_tracked(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), t)
    }

    /// Rows of `a` selected (with repetition) by `indices`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = &self.values[a.0];
        let mut data = Vec::with_capacity(indices.len() * src.cols());
        for &i in indices {
            data.extend_from_slice(src.row(i));
        }
        let v = Matrix::from_vec(indices.len(), src.cols(), data);
        let t = self.tracked[a.0];
        self.push(v, Op::GatherRows(a, indices.to_vec()), t)
    }

    /// `out[i][j] = ‖a_i − b_j‖²`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let v = sq_dist_matrix(&self.values[a.0], &self.values[b.0]);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::SqDist(a, b), t)
    }

    /// Gradient-reversal layer with coefficient `lambda`.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Var {
        let v = self.values[a.0].clone();
        let t = self.tracked[a.0];
        self.push(v, Op::GradReverse(a, lambda), t)
    }

    /// Accumulates adjoints of the 1×1 node `loss` into every tracked node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.tracked[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.values[idx];
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                if self.tracked[a.0] {
                    self.accumulate(grads, *a, g.matmul_transposed(vb));
                }
                if self.tracked[b.0] {
                    self.accumulate(grads, *b, va.transposed_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked[row.0] {
                    let mut r = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (x, y) in r.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    self.accumulate(grads, *row, r);
                }
            }
            Op::MulRow(a, row) => {
                let r = &self.values[row.0];
                if self.tracked[a.0] {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        for (x, b) in d.row_mut(i).iter_mut().zip(r.as_slice()) {
                            *x *= b;
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.tracked[row.0] {
                    let va = &self.values[a.0];
                    let mut d = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for ((x, gv), av) in d.as_mut_slice().iter_mut().zip(g.row(i)).zip(va.row(i)) {
                            *x += gv * av;
                        }
                    }
                    self.accumulate(grads, *row, d);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked[b.0] {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                if self.tracked[a.0] {
                    self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                }
                if self.tracked[b.0] {
                    self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Silu(a) => {
                let d = self.values[a.0].map(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, *a, g.zip_map(&d, |x, y| x * y));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s)));
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, e| x * e)),
            Op::Log(a) => {
                self.accumulate(grads, *a, g.zip_map(&self.values[a.0], |x, v| x / v));
            }
            Op::Abs(a) => {
                self.accumulate(grads, *a, g.zip_map(&self.values[a.0], |x, v| x * sign(v)));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(&self.values[a.0], |x, v| if v < lo || v > hi { 0.0 } else { x });
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let s = out.row(i);
                    let gi = g.row(i);
                    let dot: f64 = s.iter().zip(gi).map(|(x, y)| x * y).sum();
                    for (j, dj) in d.row_mut(i).iter_mut().enumerate() {
                        *dj = s[j] * (gi[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, g.clone().reshaped(r, c));
            }
            Op::Block { src, r0, c0 } => {
                if self.tracked[src.0] {
                    let (r, c) = self.shape(*src);
                    let mut d = Matrix::zeros(r, c);
                    d.add_block(*r0, *c0, g);
                    self.accumulate(grads, *src, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.tracked[p.0] {
                        self.accumulate(grads, *p, g.block(0, c0, r, c));
                    }
                    c0 += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.tracked[p.0] {
                        self.accumulate(grads, *p, g.block(r0, 0, r, c));
                    }
                    r0 += r;
                }
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (x, y) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *x += y;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                let dim = va.cols();
                let mut da = Matrix::zeros(va.rows(), dim);
                let mut db = Matrix::zeros(vb.rows(), dim);
                for i in 0..va.rows() {
                    let ai = va.row(i);
                    for j in 0..vb.rows() {
                        let gij = g[(i, j)];
                        if gij == 0.0 {
                            continue;
                        }
                        let bj = vb.row(j);
                        for k in 0..dim {
                            let diff = 2.0 * gij * (ai[k] - bj[k]);
                            da[(i, k)] += diff;
                            db[(j, k)] -= diff;
                        }
                    }
                }
                if self.tracked[a.0] {
                    self.accumulate(grads, *a, da);
                }
                if self.tracked[b.0] {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::GradReverse(a, lambda) => {
                let d = if self.reversal {
                    let c = -*lambda;
                    g.map(|x| x * c)
                } else {
                    g.clone()
                };
                self.accumulate(grads, *a, d);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.tracked[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn sq_dist_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.cols(), "sq_dist dimension mismatch");
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            out[(i, j)] = ai.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    out
}
