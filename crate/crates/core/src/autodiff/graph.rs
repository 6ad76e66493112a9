//! Matrix-valued reverse-mode tape.
//!
//! A [`Graph`] is built fresh for every example: leaves are either constants
//! (frozen weights, features, masks) or views into the bound trainable
//! parameter vector. [`Graph::backward`] returns the gradient of a scalar
//! node with respect to that vector only, so frozen weights never receive
//! adjoints.

use super::real::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Real> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        Matrix {
            rows,
            cols,
            data: data.iter().map(|&x| S::from_f64(x)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Matrix<S>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == S::zero() {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = S::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn map(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, other: &Matrix<S>, f: impl Fn(S, S) -> S) -> Matrix<S> {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise shape mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param { offset: usize },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
    MeanRows(Var),
    Sum(Var),
    LogSigmoid(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
}

struct Node<S> {
    value: Matrix<S>,
    op: Op,
    needs_grad: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub struct Graph<S: Real> {
    params: Vec<S>,
    nodes: Vec<Node<S>>,
}

impl<S: Real> Graph<S> {
    /// Binds the trainable parameter values; `params.len()` is the subspace
    /// dimension of every gradient this graph returns.
    pub fn new(params: Vec<S>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> S {
        let m = self.value(v);
        assert_eq!((m.rows, m.cols), (1, 1), "scalar() on non-scalar node");
        m.data[0]
    }

    fn push(&mut self, value: Matrix<S>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn constant_f64(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        self.constant(Matrix::from_f64(rows, cols, data))
    }

    /// Leaf viewing `params[offset .. offset + rows*cols]` as a row-major matrix.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        let end = offset + rows * cols;
        assert!(end <= self.params.len(), "parameter view out of range");
        let value = Matrix::from_vec(rows, cols, self.params[offset..end].to_vec());
        self.push(value, Op::Param { offset }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::MatMul(a, b), g)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::MatMulT(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Sub(a, b), g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x.scale(c));
        let g = self.grad_of(&[a]);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let g = self.grad_of(&[a]);
        self.push(v, Op::Tanh(a), g)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| {
            let inner = (x + x * x * x.scale(GELU_K)).scale(GELU_C);
            x.scale(0.5) * (S::one() + inner.tanh())
        });
        let g = self.grad_of(&[a]);
        self.push(v, Op::Gelu(a), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let row = m.row(r);
            let shift = row
                .iter()
                .map(|x| x.value())
                .fold(f64::NEG_INFINITY, f64::max);
            let shift = S::from_f64(shift);
            let mut total = S::zero();
            for (c, &x) in row.iter().enumerate() {
                let e = (x - shift).exp();
                out.data[r * m.cols + c] = e;
                total += e;
            }
            for c in 0..m.cols {
                let e = out.data[r * m.cols + c];
                out.data[r * m.cols + c] = e / total;
            }
        }
        let g = self.grad_of(&[a]);
        self.push(out, Op::SoftmaxRows(a), g)
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let m = self.value(a);
        let n = m.cols as f64;
        let mut out = Matrix::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let row = m.row(r);
            let mut mean = S::zero();
            for &x in row {
                mean += x;
            }
            let mean = mean.scale(1.0 / n);
            let mut var = S::zero();
            for &x in row {
                let d = x - mean;
                var += d * d;
            }
            let inv = S::one() / (var.scale(1.0 / n) + S::from_f64(eps)).sqrt();
            for (c, &x) in row.iter().enumerate() {
                out.data[r * m.cols + c] = (x - mean) * inv;
            }
        }
        let g = self.grad_of(&[a]);
        self.push(out, Op::LayerNormRows(a, eps), g)
    }

    /// Mean over rows, giving a `1 × cols` node.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out: Matrix<S> = Matrix::zeros(1, m.cols);
        for r in 0..m.rows {
            for (o, &x) in out.data.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / m.rows as f64;
        for o in &mut out.data {
            *o = o.scale(inv);
        }
        let g = self.grad_of(&[a]);
        self.push(out, Op::MeanRows(a), g)
    }

    /// Sum of all entries, giving a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut total = S::zero();
        for &x in &self.value(a).data {
            total += x;
        }
        let g = self.grad_of(&[a]);
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::Sum(a), g)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.log_sigmoid());
        let g = self.grad_of(&[a]);
        self.push(v, Op::LogSigmoid(a), g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols, "column slice out of range");
        let mut data = Vec::with_capacity(m.rows * len);
        for r in 0..m.rows {
            data.extend_from_slice(&m.row(r)[start..start + len]);
        }
        let v = Matrix::from_vec(m.rows, len, data);
        let g = self.grad_of(&[a]);
        self.push(v, Op::SliceCols(a, start), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows, "concat row mismatch");
                data.extend_from_slice(m.row(r));
            }
        }
        let g = self.grad_of(parts);
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            g,
        )
    }

    /// Reverse pass from a `1 × 1` node; returns the gradient over the bound
    /// parameter vector.
    pub fn backward(&self, output: Var) -> Vec<S> {
        let out = self.value(output);
        assert_eq!((out.rows, out.cols), (1, 1), "backward from non-scalar");
        let mut grad = vec![S::zero(); self.params.len()];
        let mut adj: Vec<Option<Matrix<S>>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(Matrix::from_vec(1, 1, vec![S::one()]));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = adj[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (g, &d) in grad[*offset..*offset + dy.data.len()]
                        .iter_mut()
                        .zip(&dy.data)
                    {
                        *g += d;
                    }
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = dy.matmul_t(self.value(*b));
                        accumulate(&mut adj, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = self.value(*a).t_matmul(&dy);
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = dy.matmul(self.value(*b));
                        accumulate(&mut adj, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = dy.t_matmul(self.value(*a));
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut adj, *a, dy.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut adj, *b, dy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut adj, *a, dy.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut adj, *b, dy.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = dy.zip_map(self.value(*b), |d, y| d * y);
                        accumulate(&mut adj, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = dy.zip_map(self.value(*a), |d, x| d * x);
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adj, *a, dy.map(|d| d.scale(c)));
                }
                Op::Tanh(a) => {
                    let da = dy.zip_map(&node.value, |d, t| d * (S::one() - t * t));
                    accumulate(&mut adj, *a, da);
                }
                Op::Gelu(a) => {
                    let da = dy.zip_map(self.value(*a), |d, x| {
                        let x2 = x * x;
                        let t = (x + x2 * x.scale(GELU_K)).scale(GELU_C).tanh();
                        let dinner = (S::one() + x2.scale(3.0 * GELU_K)).scale(GELU_C);
                        let dgelu = (S::one() + t).scale(0.5)
                            + x.scale(0.5) * (S::one() - t * t) * dinner;
                        d * dgelu
                    });
                    accumulate(&mut adj, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let mut dot = S::zero();
                        for c in 0..y.cols {
                            dot += dy.at(r, c) * y.at(r, c);
                        }
                        for c in 0..y.cols {
                            da.data[r * y.cols + c] = y.at(r, c) * (dy.at(r, c) - dot);
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::LayerNormRows(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = x.cols as f64;
                    let mut da = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let row = x.row(r);
                        let mut mean = S::zero();
                        for &v in row {
                            mean += v;
                        }
                        let mean = mean.scale(1.0 / n);
                        let mut var = S::zero();
                        for &v in row {
                            let d = v - mean;
                            var += d * d;
                        }
                        let inv = S::one() / (var.scale(1.0 / n) + S::from_f64(*eps)).sqrt();
                        let mut mean_dy = S::zero();
                        let mut mean_dy_y = S::zero();
                        for c in 0..x.cols {
                            mean_dy += dy.at(r, c);
                            mean_dy_y += dy.at(r, c) * y.at(r, c);
                        }
                        let mean_dy = mean_dy.scale(1.0 / n);
                        let mean_dy_y = mean_dy_y.scale(1.0 / n);
                        for c in 0..x.cols {
                            da.data[r * x.cols + c] =
                                inv * (dy.at(r, c) - mean_dy - y.at(r, c) * mean_dy_y);
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let inv = 1.0 / x.rows as f64;
                    let scaled: Vec<S> = dy.data.iter().map(|d| d.scale(inv)).collect();
                    let mut da = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        da.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(&scaled);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let d = dy.data[0];
                    accumulate(&mut adj, *a, Matrix::from_vec(x.rows, x.cols, vec![d; x.data.len()]));
                }
                Op::LogSigmoid(a) => {
                    let da = dy.zip_map(self.value(*a), |d, x| d * (-x).sigmoid());
                    accumulate(&mut adj, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut da = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        da.data[r * x.cols + start..r * x.cols + start + dy.cols]
                            .copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        if self.nodes[p.0].needs_grad {
                            let mut data = Vec::with_capacity(dy.rows * cols);
                            for r in 0..dy.rows {
                                data.extend_from_slice(&dy.row(r)[start..start + cols]);
                            }
                            accumulate(&mut adj, p, Matrix::from_vec(dy.rows, cols, data));
                        }
                        start += cols;
                    }
                }
            }
        }
        grad
    }
}

fn accumulate<S: Real>(adj: &mut [Option<Matrix<S>>], v: Var, d: Matrix<S>) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
