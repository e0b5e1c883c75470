//! Define-by-run reverse-mode differentiation.
//!
//! Every operation is evaluated as soon as it is recorded, so values are
//! available immediately through [`Graph::value`]. The recorded tape can be
//! re-evaluated with fresh leaf bindings through [`Graph::forward`], and
//! [`Graph::backward`] propagates adjoints from a scalar root to every
//! registered parameter. Node ids are assigned in creation order, which is a
//! topological order of the tape.

use std::collections::{BTreeMap, HashMap};

use super::tensor::{gemm_nt, gemm_tn, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Leaf {
    Input(String),
    Param(String),
    Const,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(Leaf),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    RowMatVec(Var, Var),
    Reshape(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::ConcatCols(_) => "concat_cols",
            Op::RowMatVec(..) => "row_matvec",
            Op::Reshape(..) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar root keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    names: HashMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The most recently recorded node.
    pub fn root(&self) -> Option<Var> {
        self.nodes.len().checked_sub(1).map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Named leaf that is not differentiated.
    pub fn input(&mut self, name: &str, value: Tensor) -> Result<Var> {
        self.named_leaf(Leaf::Input(name.to_string()), name, value)
    }

    /// Named leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        self.named_leaf(Leaf::Param(name.to_string()), name, value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf(Leaf::Const), value)
    }

    fn named_leaf(&mut self, leaf: Leaf, name: &str, value: Tensor) -> Result<Var> {
        if self.names.contains_key(name) {
            return Err(Error::Config(format!("graph leaf `{name}` registered twice")));
        }
        let v = self.push(Op::Leaf(leaf), value);
        self.names.insert(name.to_string(), v);
        Ok(v)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.record(Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Square(a))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise matrix–vector product: row `b` of `mats` holds a row-major
    /// `p × q` matrix that multiplies row `b` of `vecs` (width `q`).
    pub fn row_matvec(&mut self, mats: Var, vecs: Var) -> Result<Var> {
        self.record(Op::RowMatVec(mats, vecs))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(a, shape.to_vec()))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Rebinds the named leaves and re-evaluates the whole tape. Every named
    /// leaf must appear in `inputs`. Returns the value of the last node.
    pub fn forward(&mut self, inputs: &HashMap<String, Tensor>) -> Result<Tensor> {
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Leaf(Leaf::Input(name)) | Op::Leaf(Leaf::Param(name)) => {
                    let bound = inputs
                        .get(name)
                        .ok_or_else(|| Error::Unbound(name.clone()))?;
                    if bound.shape() != self.nodes[i].value.shape() {
                        return shape_err(
                            "leaf",
                            format!(
                                "`{name}` recorded with shape {:?}, bound with {:?}",
                                self.nodes[i].value.shape(),
                                bound.shape()
                            ),
                        );
                    }
                    bound.clone()
                }
                Op::Leaf(Leaf::Const) => continue,
                op => {
                    let op = op.clone();
                    self.eval(&op)?
                }
            };
            self.nodes[i].value = value;
        }
        self.root()
            .map(|r| self.value(r).clone())
            .ok_or_else(|| Error::Config("forward on an empty graph".into()))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = match op {
            Op::Leaf(_) => unreachable!("leaves are bound, not evaluated"),
            Op::MatMul(a, b) => val(a).matmul(val(b))?,
            Op::Transpose(a) => val(a).transpose()?,
            Op::Add(a, b) => zip_same("add", val(a), val(b), |x, y| x + y)?,
            Op::Sub(a, b) => zip_same("sub", val(a), val(b), |x, y| x - y)?,
            Op::Mul(a, b) => zip_same("mul", val(a), val(b), |x, y| x * y)?,
            Op::AddRow(a, row) => {
                let (a, row) = (val(a), val(row));
                let (_, c) = dims("add_row", a)?;
                if row.len() != c || row.rows() != 1 {
                    return shape_err(
                        "add_row",
                        format!("row {:?} does not fit {:?}", row.shape(), a.shape()),
                    );
                }
                let mut out = a.data().to_vec();
                for chunk in out.chunks_mut(c) {
                    for (o, r) in chunk.iter_mut().zip(row.data()) {
                        *o += r;
                    }
                }
                Tensor::from_parts_unchecked(a.shape().to_vec(), out)
            }
            Op::Reshape(a, shape) => val(a).clone().reshaped(shape.clone())?,
            Op::Scale(a, f) => map(val(a), |x| x * f),
            Op::Tanh(a) => map(val(a), tanh),
            Op::Square(a) => map(val(a), |x| x * x),
            Op::Sum(a) => Tensor::scalar(val(a).data().iter().sum()),
            Op::ConcatCols(parts) => {
                if parts.is_empty() {
                    return shape_err("concat_cols", "no operands");
                }
                let rows = dims("concat_cols", val(&parts[0]))?.0;
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let (r, c) = dims("concat_cols", val(p))?;
                    if r != rows {
                        return shape_err(
                            "concat_cols",
                            format!("row counts differ: {rows} vs {r}"),
                        );
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (p, w) in parts.iter().zip(&widths) {
                        out.extend_from_slice(&val(p).data()[r * w..(r + 1) * w]);
                    }
                }
                Tensor::from_parts_unchecked(vec![rows, total], out)
            }
            Op::RowMatVec(m, v) => {
                let (m, v) = (val(m), val(v));
                let (rows, mc) = dims("row_matvec", m)?;
                let (vr, q) = dims("row_matvec", v)?;
                if vr != rows || q == 0 || mc % q != 0 {
                    return shape_err(
                        "row_matvec",
                        format!("matrices {:?} incompatible with vectors {:?}", m.shape(), v.shape()),
                    );
                }
                let p = mc / q;
                let mut out = vec![0.0; rows * p];
                for b in 0..rows {
                    let vrow = &v.data()[b * q..(b + 1) * q];
                    for i in 0..p {
                        let mrow = &m.data()[b * mc + i * q..b * mc + (i + 1) * q];
                        out[b * p + i] = mrow.iter().zip(vrow).map(|(x, y)| x * y).sum();
                    }
                }
                Tensor::from_parts_unchecked(vec![rows, p], out)
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        Ok(out)
    }

    /// Reverse sweep from a one-element root. Returns a gradient for every
    /// registered parameter, zero for parameters the root does not depend on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            return shape_err(
                "backward",
                format!("root must be scalar, has shape {:?}", self.value(root).shape()),
            );
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: &Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf(_) => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let (m, k) = av.dims2().expect("checked in forward");
                    let n = bv.cols();
                    accumulate(&mut adj, *a, gemm_nt(&g, bv.data(), m, n, k));
                    accumulate(&mut adj, *b, gemm_tn(av.data(), &g, m, k, n));
                }
                Op::Transpose(a) => {
                    let (r, c) = val(a).dims2().expect("rank 2");
                    // g has shape c × r
                    let mut out = vec![0.0; r * c];
                    for j in 0..c {
                        for k in 0..r {
                            out[k * c + j] = g[j * r + k];
                        }
                    }
                    accumulate(&mut adj, *a, out);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.iter().map(|x| -x).collect());
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(val(b).data()).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(val(a).data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(a, row) => {
                    let c = val(row).len();
                    let mut drow = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        for (d, x) in drow.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    accumulate(&mut adj, *row, drow);
                    accumulate(&mut adj, *a, g);
                }
                Op::Reshape(a, _) => {
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, f) => {
                    accumulate(&mut adj, *a, g.iter().map(|x| x * f).collect());
                }
                Op::Tanh(a) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let d = g
                        .iter()
                        .zip(val(a).data())
                        .map(|(x, y)| 2.0 * x * y)
                        .collect();
                    accumulate(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    accumulate(&mut adj, *a, vec![g[0]; val(a).len()]);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = val(p).cols();
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut adj, *p, d);
                        offset += w;
                    }
                }
                Op::RowMatVec(m, v) => {
                    let (mv, vv) = (val(m), val(v));
                    let (rows, mc) = mv.dims2().expect("checked");
                    let q = vv.cols();
                    let p = mc / q;
                    let mut dm = vec![0.0; rows * mc];
                    let mut dv = vec![0.0; rows * q];
                    for b in 0..rows {
                        let vrow = &vv.data()[b * q..(b + 1) * q];
                        for i in 0..p {
                            let gi = g[b * p + i];
                            let base = b * mc + i * q;
                            for j in 0..q {
                                dm[base + j] = gi * vrow[j];
                                dv[b * q + j] += gi * mv.data()[base + j];
                            }
                        }
                    }
                    accumulate(&mut adj, *m, dm);
                    accumulate(&mut adj, *v, dv);
                }
            }
        }

        let mut grads = Gradients::new();
        for node_idx in self.names.values() {
            if let Op::Leaf(Leaf::Param(name)) = &self.nodes[node_idx.0].op {
                let shape = self.nodes[node_idx.0].value.shape().to_vec();
                let data = adj
                    .get(node_idx.0)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
                grads.insert(name.clone(), Tensor::from_parts_unchecked(shape, data));
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(&d) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::Shape {
        op,
        detail: format!("expected rank ≤ 2, got {:?}", t.shape()),
    })
}

fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Ok(Tensor::from_parts_unchecked(a.shape().to_vec(), data))
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts_unchecked(a.shape().to_vec(), a.data().iter().map(|x| f(*x)).collect())
}

/// `tanh` through a single `exp`, which is considerably cheaper than the
/// libm routine. Small arguments keep the libm path to avoid cancellation.
fn tanh(x: f64) -> f64 {
    if x.abs() < 0.0625 {
        return x.tanh();
    }
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}
