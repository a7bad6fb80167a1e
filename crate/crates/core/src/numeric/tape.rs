//! Eager reverse-mode differentiation tape.
//!
//! Builders compute values immediately and record the op; [`Tape::backward`]
//! makes one reverse sweep and accumulates parameter gradients into the
//! originating [`ParamSet`]. Every node value is checked for finiteness on
//! construction, so a NaN/Inf surfaces at the op that produced it rather
//! than at the end of a training step.
//!
//! A [`Var`] is only meaningful on the tape that produced it; tapes are
//! built, differentiated, and dropped within a single step.

use crate::error::{Error, Result};
use crate::numeric::params::ParamSet;
use crate::numeric::tensor::{gemm, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Norm floor used when normalizing rows; keeps zero rows finite.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Param(String),
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, alpha: f64 },
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    GatherCols { x: Var, idx: Vec<usize> },
    RowSums(Var),
    AddRowBroadcast { x: Var, row: Var },
    Sum(Var),
    NormalizeRows(Var),
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Param(_) => "param",
        Op::Constant => "constant",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Affine { .. } => "affine",
        Op::MatMul { .. } => "matmul",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Exp(_) => "exp",
        Op::Ln(_) => "ln",
        Op::Clamp { .. } => "clamp",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::GatherCols { .. } => "gather_cols",
        Op::RowSums(_) => "row_sums",
        Op::AddRowBroadcast { .. } => "add_row_broadcast",
        Op::Sum(_) => "sum",
        Op::NormalizeRows(_) => "normalize_rows",
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// Gradient of the last `backward` loss w.r.t. `v`, if backward ran.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.as_ref().map(|g| &g[v.0])
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                node: format!("{}#{}", op_name(&op), self.nodes.len()),
            });
        }
        self.grads = None;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, msg: String) -> Error {
        Error::Shape { op, msg }
    }

    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let value = params.value(name)?.clone();
        self.push(Op::Param(name.to_string()), value)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(Tensor::scalar(v))
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(self.shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(Op::Mul(a, b), value)
    }

    /// `alpha * x + beta`, element-wise with constant coefficients.
    pub fn affine(&mut self, x: Var, alpha: f64, beta: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| alpha * v + beta).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(Op::Affine { x, alpha }, value)
    }

    /// Matrix product with optional transposes on either operand.
    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 {
            return Err(self.shape_err("matmul", "rank-2 operands required".into()));
        }
        let (m, k) = if ta {
            (va.shape()[1], va.shape()[0])
        } else {
            (va.shape()[0], va.shape()[1])
        };
        let (k2, n) = if tb {
            (vb.shape()[1], vb.shape()[0])
        } else {
            (vb.shape()[0], vb.shape()[1])
        };
        if k != k2 {
            return Err(self.shape_err(
                "matmul",
                format!("inner dims {k} vs {k2} ({:?} x {:?})", va.shape(), vb.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, va.data(), ta, vb.data(), tb, 0.0, &mut out);
        let value = Tensor::from_vec(&[m, n], out)?;
        self.push(Op::MatMul { a, ta, b, tb }, value)
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, x: Var, f: F, op: Op) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(op, value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Row-wise, max-stabilized softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(self.shape_err("softmax_rows", "rank-2 operand required".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = v.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                data[i * c + j] /= s;
            }
        }
        let value = Tensor::from_vec(&[r, c], data)?;
        self.push(Op::SoftmaxRows(x), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.rows() != vb.rows() {
            return Err(self.shape_err(
                "concat_cols",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let (r, ca, cb) = (va.rows(), va.cols(), vb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let value = Tensor::from_vec(&[r, ca + cb], data)?;
        self.push(Op::ConcatCols(a, b), value)
    }

    /// Stack matrices with matching column counts on top of each other.
    /// Row-major layout makes this a plain buffer concatenation.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat_rows", "needs at least one part".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.cols() != cols {
                return Err(self.shape_err(
                    "concat_rows",
                    format!("{:?} alongside {cols}-column parts", v.shape()),
                ));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[rows, cols], data)?;
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    /// Select rows by index; duplicates allowed (gradients scatter-add).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(self.shape_err("gather_rows", "rank-2 operand required".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(self.shape_err("gather_rows", format!("row {bad} out of {r}")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        let value = Tensor::from_vec(&[idx.len(), c], data)?;
        self.push(Op::GatherRows { x, idx: idx.to_vec() }, value)
    }

    /// Select columns by index; duplicates allowed (gradients scatter-add).
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(self.shape_err("gather_cols", "rank-2 operand required".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(self.shape_err("gather_cols", format!("column {bad} out of {c}")));
        }
        let mut data = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            let row = v.row(i);
            for &j in idx {
                data.push(row[j]);
            }
        }
        let value = Tensor::from_vec(&[r, idx.len()], data)?;
        self.push(Op::GatherCols { x, idx: idx.to_vec() }, value)
    }

    /// Sum each row into an `r x 1` column.
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(self.shape_err("row_sums", "rank-2 operand required".into()));
        }
        let data = (0..v.rows()).map(|i| v.row(i).iter().sum()).collect();
        let value = Tensor::from_vec(&[v.rows(), 1], data)?;
        self.push(Op::RowSums(x), value)
    }

    /// Add a `1 x c` row vector to every row of an `r x c` matrix.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vx.shape().len() != 2 || vr.shape() != [1, vx.cols()] {
            return Err(self.shape_err(
                "add_row_broadcast",
                format!("{:?} plus {:?}", vx.shape(), vr.shape()),
            ));
        }
        let (r, c) = (vx.rows(), vx.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(vx.at2(i, j) + vr.data()[j]);
            }
        }
        let value = Tensor::from_vec(&[r, c], data)?;
        self.push(Op::AddRowBroadcast { x, row }, value)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(Op::Sum(x), value)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(self.shape_err("mean", "empty tensor".into()));
        }
        let s = self.sum(x)?;
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    /// L2-normalize each row, with norm floor [`NORM_FLOOR`].
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(self.shape_err("normalize_rows", "rank-2 operand required".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            data.extend(row.iter().map(|x| x / norm));
        }
        let value = Tensor::from_vec(&[r, c], data)?;
        self.push(Op::NormalizeRows(x), value)
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients accumulate
    /// into `params` (on top of whatever is already there).
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(self.shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|node| Tensor::zeros(node.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for i in (0..n).rev() {
            // Inputs always precede their consumer on an eager tape, so the
            // split separates this node's gradient from its inputs'.
            let (input_grads, rest) = grads.split_at_mut(i);
            let g: &Tensor = &rest[0];
            if g.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(_) | Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut input_grads[a.0], g.data());
                    accumulate(&mut input_grads[b.0], g.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut input_grads[a.0], g.data());
                    for (dst, s) in input_grads[b.0].data_mut().iter_mut().zip(g.data()) {
                        *dst -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for ((dst, s), y) in input_grads[a.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(vb.data())
                    {
                        *dst += s * y;
                    }
                    for ((dst, s), y) in input_grads[b.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(va.data())
                    {
                        *dst += s * y;
                    }
                }
                Op::Affine { x, alpha } => {
                    for (dst, s) in input_grads[x.0].data_mut().iter_mut().zip(g.data()) {
                        *dst += alpha * s;
                    }
                }
                Op::MatMul { a, ta, b, tb } => {
                    let (m, nn) = (node.value.rows(), node.value.cols());
                    let k = if *ta {
                        self.nodes[a.0].value.rows()
                    } else {
                        self.nodes[a.0].value.cols()
                    };
                    let va = self.nodes[a.0].value.data();
                    let vb = self.nodes[b.0].value.data();
                    // d(op(a)) = g @ op(b)^T ; d(op(b)) = op(a)^T @ g — each
                    // mapped back through the stored layout by flag algebra.
                    if *ta {
                        gemm(k, nn, m, 1.0, vb, *tb, g.data(), true, 1.0, input_grads[a.0].data_mut());
                    } else {
                        gemm(m, nn, k, 1.0, g.data(), false, vb, !*tb, 1.0, input_grads[a.0].data_mut());
                    }
                    if *tb {
                        gemm(nn, m, k, 1.0, g.data(), true, va, *ta, 1.0, input_grads[b.0].data_mut());
                    } else {
                        gemm(k, m, nn, 1.0, va, !*ta, g.data(), false, 1.0, input_grads[b.0].data_mut());
                    }
                }
                Op::Sigmoid(x) => {
                    for ((dst, s), y) in input_grads[x.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(node.value.data())
                    {
                        *dst += s * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    for ((dst, s), y) in input_grads[x.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(node.value.data())
                    {
                        *dst += s * (1.0 - y * y);
                    }
                }
                Op::Exp(x) => {
                    for ((dst, s), y) in input_grads[x.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(node.value.data())
                    {
                        *dst += s * y;
                    }
                }
                Op::Ln(x) => {
                    let vx = &self.nodes[x.0].value;
                    for ((dst, s), v) in input_grads[x.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(vx.data())
                    {
                        *dst += s / v;
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let vx = &self.nodes[x.0].value;
                    for ((dst, s), v) in input_grads[x.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(vx.data())
                    {
                        if *lo <= *v && *v <= *hi {
                            *dst += s;
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let dst = input_grads[x.0].data_mut();
                    for i in 0..r {
                        let y = node.value.row(i);
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dst[i * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a.0].value.cols();
                    let cb = self.nodes[b.0].value.cols();
                    let r = node.value.rows();
                    for i in 0..r {
                        let gr = &g.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                        for (j, s) in gr[..ca].iter().enumerate() {
                            input_grads[a.0].data_mut()[i * ca + j] += s;
                        }
                        for (j, s) in gr[ca..].iter().enumerate() {
                            input_grads[b.0].data_mut()[i * cb + j] += s;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = input_grads[p.0].len();
                        let src = &g.data()[offset..offset + len];
                        accumulate(&mut input_grads[p.0], src);
                        offset += len;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let c = node.value.cols();
                    let dst = input_grads[x.0].data_mut();
                    for (p, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dst[i * c + j] += g.data()[p * c + j];
                        }
                    }
                }
                Op::GatherCols { x, idx } => {
                    let r = node.value.rows();
                    let c_in = self.nodes[x.0].value.cols();
                    let c_out = idx.len();
                    let dst = input_grads[x.0].data_mut();
                    for i in 0..r {
                        for (p, &j) in idx.iter().enumerate() {
                            dst[i * c_in + j] += g.data()[i * c_out + p];
                        }
                    }
                }
                Op::RowSums(x) => {
                    let c = self.nodes[x.0].value.cols();
                    let dst = input_grads[x.0].data_mut();
                    for i in 0..node.value.rows() {
                        let s = g.data()[i];
                        for j in 0..c {
                            dst[i * c + j] += s;
                        }
                    }
                }
                Op::AddRowBroadcast { x, row } => {
                    accumulate(&mut input_grads[x.0], g.data());
                    let c = node.value.cols();
                    let dst = input_grads[row.0].data_mut();
                    for chunk in g.data().chunks_exact(c) {
                        for (d, &gv) in dst.iter_mut().zip(chunk) {
                            *d += gv;
                        }
                    }
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    for dst in input_grads[x.0].data_mut() {
                        *dst += s;
                    }
                }
                Op::NormalizeRows(x) => {
                    let vx = &self.nodes[x.0].value;
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let dst = input_grads[x.0].data_mut();
                    for i in 0..r {
                        let xin = vx.row(i);
                        let norm = xin.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gr = &g.data()[i * c..(i + 1) * c];
                        if norm <= NORM_FLOOR {
                            // Below the floor the map is x / NORM_FLOOR, i.e. linear.
                            for j in 0..c {
                                dst[i * c + j] += gr[j] / NORM_FLOOR;
                            }
                        } else {
                            let y = node.value.row(i);
                            let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                dst[i * c + j] += (gr[j] - y[j] * dot) / norm;
                            }
                        }
                    }
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let entry = params.get_mut(name)?;
                accumulate(&mut entry.grad, grads[i].data());
                if !entry.grad.all_finite() {
                    return Err(Error::NonFinite {
                        node: format!("grad({name})"),
                    });
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }
}

fn accumulate(dst: &mut Tensor, src: &[f64]) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}
