//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records one forward pass against a borrowed [`ParamSet`];
//! [`Tape::backward`] accumulates parameter gradients into a caller-owned
//! buffer so a batch can share one allocation.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub values: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Mat> {
        self.values.iter().map(|m| Mat::zeros(m.raw_dim())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    Gather { table: usize, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, rstd: Vec<f64> },
    Cols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Rows { x: Var, start: usize },
    WeightedNll { logits: Var, targets: Vec<Target>, probs: Mat },
}

struct Node {
    op: Op,
    value: Option<Mat>,
}

/// One weighted negative log-likelihood term: `-weight * ln softmax(row)[class]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub row: usize,
    pub class: usize,
    pub weight: f64,
}

pub const LN_EPS: f64 = 1e-5;
/// Floor applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-12;

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(i), _) => self.params.values[*i].view(),
            (_, Some(m)) => m.view(),
            _ => unreachable!("non-parameter nodes store their value"),
        }
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id.0),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Rows `ids` of a parameter table.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Var {
        let t = &self.params.values[table.0];
        let mut out = Mat::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            out,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(Op::Add(a, b), v)
    }

    /// Adds a `1 × m` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let v = &self.value(x) + &self.value(row);
        self.push(Op::AddRow(x, row), v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = &self.value(x) * c;
        self.push(Op::Scale(x, c), v)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(gelu);
        self.push(Op::Gelu(x), v)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let v = softmax_rows(self.value(x), causal);
        self.push(Op::Softmax(x), v)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = Mat::zeros(xv.raw_dim());
        let mut rstd = Vec::with_capacity(xv.nrows());
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            Zip::from(xhat.row_mut(r)).and(&row).for_each(|o, &a| *o = (a - mean) * rs);
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            out,
        )
    }

    pub fn cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + width]).to_owned();
        self.push(Op::Cols { x, start }, v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// Rows `start..` of `x`.
    pub fn rows_from(&mut self, x: Var, start: usize) -> Var {
        let v = self.value(x).slice(s![start.., ..]).to_owned();
        self.push(Op::Rows { x, start }, v)
    }

    /// Sum of weighted negative log-likelihoods of `targets` under a row-wise
    /// softmax of `logits`, as a `1 × 1` value.
    pub fn weighted_nll(&mut self, logits: Var, targets: Vec<Target>) -> Var {
        let probs = softmax_rows(self.value(logits), false);
        let loss: f64 = targets
            .iter()
            .map(|t| -t.weight * probs[[t.row, t.class]].max(PROB_EPS).ln())
            .sum();
        self.push(
            Op::WeightedNll {
                logits,
                targets,
                probs,
            },
            Mat::from_elem((1, 1), loss),
        )
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Back-propagates from the `1 × 1` node `loss`, adding parameter
    /// gradients into `grads` (indexed like the parameter set).
    pub fn backward(&self, loss: Var, grads: &mut [Mat]) {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Mat::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(gout) = g[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(i) => grads[*i] += &gout,
                Op::Gather { table, ids } => {
                    let tg = &mut grads[*table];
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = tg.row_mut(id);
                        row += &gout.row(r);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = gout.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&gout);
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = gout.dot(&self.value(*b));
                    let db = gout.t().dot(&self.value(*a));
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *b, gout.clone());
                    accumulate(&mut g, *a, gout);
                }
                Op::AddRow(x, row) => {
                    let drow = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut g, *row, drow);
                    accumulate(&mut g, *x, gout);
                }
                Op::Scale(x, c) => accumulate(&mut g, *x, gout * *c),
                Op::Gelu(x) => {
                    let mut dx = gout;
                    Zip::from(&mut dx)
                        .and(&self.value(*x))
                        .for_each(|d, &a| *d *= gelu_grad(a));
                    accumulate(&mut g, *x, dx);
                }
                Op::Softmax(x) => {
                    let y = self.value(Var(idx));
                    let mut dx = gout;
                    for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &p| *d = p * (*d - dot));
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gm = self.value(*gamma);
                    let dgamma = (&gout * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &gout * &gm;
                    let n = dxhat.ncols() as f64;
                    let mut dx = Mat::zeros(dxhat.raw_dim());
                    for r in 0..dxhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh: f64 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
                        let k = rstd[r] / n;
                        Zip::from(dx.row_mut(r)).and(&dh).and(&xh).for_each(|o, &d, &h| {
                            *o = k * (n * d - sum_dh - h * sum_dh_xh);
                        });
                    }
                    accumulate(&mut g, *gamma, dgamma);
                    accumulate(&mut g, *beta, dbeta);
                    accumulate(&mut g, *x, dx);
                }
                Op::Cols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.raw_dim());
                    dx.slice_mut(s![.., *start..*start + gout.ncols()]).assign(&gout);
                    accumulate(&mut g, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let dp = gout.slice(s![.., at..at + w]).to_owned();
                        at += w;
                        accumulate(&mut g, p, dp);
                    }
                }
                Op::Rows { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.raw_dim());
                    dx.slice_mut(s![*start.., ..]).assign(&gout);
                    accumulate(&mut g, *x, dx);
                }
                Op::WeightedNll {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = gout[[0, 0]];
                    let mut dx = Mat::zeros(probs.raw_dim());
                    for t in targets {
                        let mut row = dx.row_mut(t.row);
                        row.scaled_add(t.weight * scale, &probs.row(t.row));
                        row[t.class] -= t.weight * scale;
                    }
                    accumulate(&mut g, *logits, dx);
                }
            }
        }
    }
}

fn accumulate(g: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut g[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable row-wise softmax, optionally with a causal mask.
pub fn softmax_rows(x: ArrayView2<f64>, causal: bool) -> Mat {
    let mut out = Mat::zeros(x.raw_dim());
    for (i, (row, mut orow)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let width = if causal { (i + 1).min(row.len()) } else { row.len() };
        let max = row
            .iter()
            .take(width)
            .fold(f64::NEG_INFINITY, |m, &a| m.max(a));
        let mut sum = 0.0;
        for j in 0..width {
            let e = (row[j] - max).exp();
            orow[j] = e;
            sum += e;
        }
        for j in 0..width {
            orow[j] /= sum;
        }
    }
    out
}
