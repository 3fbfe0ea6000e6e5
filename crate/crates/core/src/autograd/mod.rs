//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! and [`Graph::backward`] walks the tape in reverse accumulating gradients.
//! All tensors are 2-D; vectors are `1×n` rows or `n×1` columns. Batched
//! sequences are stored as stacked rows (`batch * len` rows, row `b * len + t`).
//!
//! Parameters live outside the graph in a [`ParamStore`](crate::nn::ParamStore);
//! [`Graph::param`] copies a parameter onto the tape once per graph and the
//! returned [`Gradients`] are keyed by parameter id.

mod attention;

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

pub use attention::AttentionSpec;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Embedding(Var, Vec<usize>),
    SumAll(Var),
    SumRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    LogSoftmax(Var),
    Pick(Var, Vec<(usize, usize)>),
    L2Normalize(Var, Vec<f64>),
    Attention { q: Var, k: Var, v: Var, spec: AttentionSpec, probs: Vec<Mat> },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], keyed by parameter id.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<usize, Mat>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Mat> {
        self.by_param.get(&param)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &Mat)> {
        self.by_param.iter()
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    param_of_node: HashMap<usize, usize>,
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Column vector constant (`n×1`).
    pub fn column(&mut self, values: &[f64]) -> Var {
        let m = Mat::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape");
        self.constant(m)
    }

    /// Registers a trainable leaf bound to parameter `id`. Repeated calls with
    /// the same id return the same node.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(id, v);
        self.param_of_node.insert(v.0, id);
        v
    }

    /// Frozen leaf: participates in the forward pass but receives no gradient.
    pub fn frozen(&mut self, value: &Mat) -> Var {
        self.constant(value.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `a + row` with `row` of shape `1×c` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let ca = self.shape(a).1;
        assert_eq!(self.shape(row), (1, ca), "add_row: shape mismatch");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a * col` with `col` of shape `r×1` broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ra, _) = self.shape(a);
        assert_eq!(self.shape(col), (ra, 1), "mul_col: shape mismatch");
        let value = self.value(a) * self.value(col);
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) + s;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// `ln(1 + e^x)`, computed stably. `softplus(-x) = -ln σ(x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros((idx.len(), src.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            value.row_mut(i).assign(&src.row(r));
        }
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Table lookup where index 0 is padding: it yields a zero row and
    /// passes no gradient back to the table.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Var {
        let src = self.value(table);
        let mut value = Mat::zeros((idx.len(), src.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            if r != 0 {
                value.row_mut(i).assign(&src.row(r));
            }
        }
        let rg = self.rg(table);
        self.push(value, Op::Embedding(table, idx.to_vec()), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row-wise layer normalisation with affine `gamma`/`beta` (`1×c` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let mut xhat = Mat::zeros((r, c));
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                xhat[[i, j]] = (row[j] - mean) * is;
            }
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|v| v - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Picks entries `(row, col)` into an `n×1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let src = self.value(a);
        let vals: Vec<f64> = at.iter().map(|&(r, c)| src[[r, c]]).collect();
        let value = Mat::from_shape_vec((vals.len(), 1), vals).expect("pick shape");
        let rg = self.rg(a);
        self.push(value, Op::Pick(a, at.to_vec()), rg)
    }

    /// Divides every row by its (smoothed) Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = (row.dot(&row) + NORM_EPS).sqrt();
            norms.push(n);
            row.mapv_inplace(|v| v / n);
        }
        let rg = self.rg(a);
        self.push(value, Op::L2Normalize(a, norms), rg)
    }

    /// Multi-head scaled dot-product attention over stacked sequences.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Var {
        let (value, probs) =
            attention::forward(self.value(q), self.value(k), self.value(v), &spec);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(value, Op::Attention { q, k, v, spec, probs }, rg)
    }

    /// Back-propagates from the scalar node `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if self.param_of_node.contains_key(&i) {
                grads[i] = Some(g);
            }
        }

        let mut by_param = HashMap::new();
        for (&node, &pid) in &self.param_of_node {
            let g = grads[node]
                .take()
                .unwrap_or_else(|| Mat::zeros(self.nodes[node].value.dim()));
            by_param.insert(pid, g);
        }
        Gradients { by_param }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Mat| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, col) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*col));
                }
                if self.rg(*col) {
                    let prod = g * self.value(*a);
                    acc(*col, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, s) => acc(*a, g * *s),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, g * &y.mapv(|v| v * (1.0 - v)));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, g * &y.mapv(|v| 1.0 - v * v));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                acc(*a, g * &x.mapv(gelu_grad));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc(*a, g * &x.mapv(sigmoid));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.value(*p).ncols();
                    acc(*p, g.slice(s![.., start..start + c]).to_owned());
                    start += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let r = self.value(*p).nrows();
                    acc(*p, g.slice(s![start..start + r, ..]).to_owned());
                    start += r;
                }
            }
            Op::SliceCols(a, start) => {
                let mut full = Mat::zeros(self.value(*a).dim());
                let c = g.ncols();
                full.slice_mut(s![.., *start..*start + c]).assign(g);
                acc(*a, full);
            }
            Op::GatherRows(a, idx) => {
                let mut full = Mat::zeros(self.value(*a).dim());
                for (k, &r) in idx.iter().enumerate() {
                    let mut row = full.row_mut(r);
                    row += &g.row(k);
                }
                acc(*a, full);
            }
            Op::Embedding(table, idx) => {
                let mut full = Mat::zeros(self.value(*table).dim());
                for (k, &r) in idx.iter().enumerate() {
                    if r != 0 {
                        let mut row = full.row_mut(r);
                        row += &g.row(k);
                    }
                }
                acc(*table, full);
            }
            Op::SumAll(a) => {
                acc(*a, Mat::from_elem(self.value(*a).dim(), g[[0, 0]]));
            }
            Op::SumRows(a) => {
                let (r, c) = self.value(*a).dim();
                let mut full = Mat::zeros((r, c));
                for i in 0..r {
                    full.row_mut(i).fill(g[[i, 0]]);
                }
                acc(*a, full);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                if self.rg(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let dxhat = g * self.value(*gamma);
                    let (r, c) = dxhat.dim();
                    let mut dx = Mat::zeros((r, c));
                    for i in 0..r {
                        let dr = dxhat.row(i);
                        let xr = xhat.row(i);
                        let m1 = dr.sum() / c as f64;
                        let m2 = dr.dot(&xr) / c as f64;
                        for j in 0..c {
                            dx[[i, j]] = inv_std[i] * (dr[j] - m1 - xr[j] * m2);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut dx = g.clone();
                for i in 0..y.nrows() {
                    let gs = g.row(i).sum();
                    for j in 0..y.ncols() {
                        dx[[i, j]] -= y[[i, j]].exp() * gs;
                    }
                }
                acc(*a, dx);
            }
            Op::Pick(a, at) => {
                let mut full = Mat::zeros(self.value(*a).dim());
                for (k, &(r, c)) in at.iter().enumerate() {
                    full[[r, c]] += g[[k, 0]];
                }
                acc(*a, full);
            }
            Op::L2Normalize(a, norms) => {
                let y = &node.value;
                let mut dx = g.clone();
                for i in 0..y.nrows() {
                    let proj = y.row(i).dot(&g.row(i));
                    for j in 0..y.ncols() {
                        dx[[i, j]] = (g[[i, j]] - y[[i, j]] * proj) / norms[i];
                    }
                }
                acc(*a, dx);
            }
            Op::Attention { q, k, v, spec, probs } => {
                let (dq, dk, dv) = attention::backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    spec,
                    probs,
                    g,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
