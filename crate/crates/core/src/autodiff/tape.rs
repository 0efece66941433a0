//! Reverse-mode tape over dense matrices.
//!
//! Every forward method appends one node and returns a [`Var`] handle.
//! Nodes are appended after their inputs, so the node vector is already a
//! topological order and `backward` walks it once in reverse.

use std::rc::Rc;

use super::matrix::{Matrix, SparseMatrix};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::hyperbolic::{
    artanh_ratio, artanh_ratio_slope, projection_scale, tanh_ratio, tanh_ratio_slope, ARTANH_MAX,
    MIN_NORM,
};

/// Lower/upper clamp used by [`Tape::arctanh_clamped`].
pub const ARCTANH_CLAMP: f64 = 1.0 - 1e-7;

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
    Param(ParamId),
    MatMul(Var, Var),
    SparseMatMul(Rc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowBroadcastMul(Var, Var),
    Tanh(Var),
    ArctanhClamped(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    Exp0(Var, Var),
    Log0(Var, Var),
    BallProject(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    traced: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn require_scalar(op: &'static str, c: &Matrix) -> Result<f64> {
    if c.shape() == (1, 1) {
        Ok(c.item())
    } else {
        Err(Error::dim(op, format!("curvature must be 1x1, got {:?}", c.shape())))
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn is_traced(&self, v: Var) -> bool {
        self.nodes[v.0].traced
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, traced: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(name));
        }
        self.nodes.push(Node { value, op, traced });
        Ok(Var(self.nodes.len() - 1))
    }

    fn traced(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].traced)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).map(f);
        let traced = self.traced(&[x]);
        self.push(name, value, op, traced)
    }

    /// Untraced input.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Traced leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push("param", store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let traced = self.traced(&[a, b]);
        self.push("matmul", value, Op::MatMul(a, b), traced)
    }

    /// `S · x` for a constant sparse `S`.
    pub fn sparse_dense_matmul(&mut self, s: Rc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = s.matmul(self.value(x))?;
        let traced = self.traced(&[x]);
        self.push("sparse_dense_matmul", value, Op::SparseMatMul(s, x), traced)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let traced = self.traced(&[a, b]);
        self.push("add", value, Op::Add(a, b), traced)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let traced = self.traced(&[a, b]);
        self.push("sub", value, Op::Sub(a, b), traced)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let traced = self.traced(&[a, b]);
        self.push("mul", value, Op::Mul(a, b), traced)
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xm, bm) = (self.value(x), self.value(row));
        if bm.rows() != 1 || bm.cols() != xm.cols() {
            return Err(Error::dim("add_row", format!("{:?} + {:?}", xm.shape(), bm.shape())));
        }
        let mut value = xm.clone();
        let b = bm.data().to_vec();
        for r in 0..value.rows() {
            for (o, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let traced = self.traced(&[x, row]);
        self.push("add_row", value, Op::AddRow(x, row), traced)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary("scale", x, |v| k * v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + k, Op::AddScalar(x))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let neg = self.scale(x, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    /// Multiplies row `i` of `x` by `s[i]` (`s` is `rows × 1`) or every
    /// entry by `s` when `s` is `1 × 1`.
    pub fn row_broadcast_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xm, sm) = (self.value(x), self.value(s));
        let ok = sm.cols() == 1 && (sm.rows() == xm.rows() || sm.rows() == 1);
        if !ok {
            return Err(Error::dim(
                "row_broadcast_mul",
                format!("{:?} * {:?}", xm.shape(), sm.shape()),
            ));
        }
        let mut value = xm.clone();
        for r in 0..value.rows() {
            let k = if sm.rows() == 1 { sm.item() } else { sm.get(r, 0) };
            value.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        let traced = self.traced(&[x, s]);
        self.push("row_broadcast_mul", value, Op::RowBroadcastMul(x, s), traced)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    /// `artanh` of the input clamped into `[-1 + 1e-7, 1 - 1e-7]`.
    pub fn arctanh_clamped(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "arctanh_clamped",
            x,
            |v| v.clamp(-ARCTANH_CLAMP, ARCTANH_CLAMP).atanh(),
            Op::ArctanhClamped(x),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, Op::Sqrt(x))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(x).data().iter().sum());
        let traced = self.traced(&[x]);
        self.push("sum", value, Op::Sum(x), traced)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        if m.is_empty() {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let value = Matrix::scalar(m.data().iter().sum::<f64>() / m.len() as f64);
        let traced = self.traced(&[x]);
        self.push("mean", value, Op::Mean(x), traced)
    }

    /// Euclidean norm of each row as a `rows × 1` column, floored at 1e-15.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        let value = Matrix::column(
            (0..m.rows())
                .map(|r| row_norm(m.row(r)).max(MIN_NORM))
                .collect(),
        );
        let traced = self.traced(&[x]);
        self.push("row_norm", value, Op::RowNorm(x), traced)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::dim("concat_rows", "no inputs"));
        };
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            if m.cols() != cols {
                return Err(Error::dim("concat_rows", format!("{} vs {} columns", m.cols(), cols)));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let value = Matrix::new(rows, cols, data)?;
        let traced = self.traced(parts);
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), traced)
    }

    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Rc<[usize]>>) -> Result<Var> {
        let idx: Rc<[usize]> = idx.into();
        let m = self.value(x);
        let cols = m.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            if i >= m.rows() {
                return Err(Error::dim("gather_rows", format!("row {i} of {}", m.rows())));
            }
            data.extend_from_slice(m.row(i));
        }
        let value = Matrix::new(idx.len(), cols, data)?;
        let traced = self.traced(&[x]);
        self.push("gather_rows", value, Op::GatherRows(x, idx), traced)
    }

    /// Row-wise exponential map at the origin with a traced `1 × 1`
    /// curvature. No ball projection is applied.
    pub fn exp0(&mut self, v: Var, c: Var) -> Result<Var> {
        let curv = require_scalar("exp0", self.value(c))?;
        if curv.is_nan() || curv <= 0.0 {
            return Err(Error::numeric("exp0 (curvature)"));
        }
        let sqrt_c = curv.sqrt();
        let mut value = self.value(v).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let g = tanh_ratio(sqrt_c * row_norm(row));
            row.iter_mut().for_each(|x| *x *= g);
        }
        let traced = self.traced(&[v, c]);
        self.push("exp0", value, Op::Exp0(v, c), traced)
    }

    /// Row-wise logarithmic map at the origin; `√c‖y‖` is clamped to
    /// `1 - 1e-7` before `artanh`.
    pub fn log0(&mut self, y: Var, c: Var) -> Result<Var> {
        let curv = require_scalar("log0", self.value(c))?;
        if curv.is_nan() || curv <= 0.0 {
            return Err(Error::numeric("log0 (curvature)"));
        }
        let sqrt_c = curv.sqrt();
        let mut value = self.value(y).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let k = artanh_ratio((sqrt_c * row_norm(row)).min(ARTANH_MAX));
            row.iter_mut().for_each(|x| *x *= k);
        }
        let traced = self.traced(&[y, c]);
        self.push("log0", value, Op::Log0(y, c), traced)
    }

    /// Rescales rows reaching past `(1 - 1e-5)/√c` back onto that radius.
    pub fn ball_project(&mut self, x: Var, c: Var) -> Result<Var> {
        let curv = require_scalar("ball_project", self.value(c))?;
        if curv.is_nan() || curv <= 0.0 {
            return Err(Error::numeric("ball_project (curvature)"));
        }
        let sqrt_c = curv.sqrt();
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let k = projection_scale(row_norm(row), sqrt_c);
            if k != 1.0 {
                row.iter_mut().for_each(|x| *x *= k);
            }
        }
        let traced = self.traced(&[x, c]);
        self.push("ball_project", value, Op::BallProject(x, c), traced)
    }

    /// Propagates `d loss / d node` backwards and adds the result into the
    /// gradient accumulator of every parameter reached.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.accumulate(*id, &g);
            }
        }
        Ok(())
    }

    /// Gradients of a traced scalar with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Matrix>>> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                root.value.shape()
            )));
        }
        if !root.traced {
            return Err(Error::Usage("backward on an untraced tensor".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.traced {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut send = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].traced {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                send(*a, g.matmul_t(val(*b)));
                send(*b, val(*a).t_matmul(g));
            }
            Op::SparseMatMul(s, x) => send(*x, s.t_matmul(g)),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |g, y| g * y));
                send(*b, g.zip_map(val(*a), |g, x| g * x));
            }
            Op::AddRow(x, row) => {
                send(*x, g.clone());
                let mut col_sums = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, v) in col_sums.row_mut(0).iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                send(*row, col_sums);
            }
            Op::Scale(x, k) => send(*x, g.map(|v| k * v)),
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::RowBroadcastMul(x, s) => {
                let (xm, sm) = (val(*x), val(*s));
                let mut gx = g.clone();
                let mut gs = Matrix::zeros(sm.rows(), 1);
                for r in 0..g.rows() {
                    let (k, slot) = if sm.rows() == 1 { (sm.item(), 0) } else { (sm.get(r, 0), r) };
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    let d: f64 = g.row(r).iter().zip(xm.row(r)).map(|(a, b)| a * b).sum();
                    gs.data_mut()[slot] += d;
                }
                send(*x, gx);
                send(*s, gs);
            }
            Op::Tanh(x) => send(*x, g.zip_map(out, |g, y| g * (1.0 - y * y))),
            Op::ArctanhClamped(x) => send(
                *x,
                g.zip_map(val(*x), |g, v| {
                    let c = v.clamp(-ARCTANH_CLAMP, ARCTANH_CLAMP);
                    g / (1.0 - c * c)
                }),
            ),
            Op::Sigmoid(x) => send(*x, g.zip_map(out, |g, y| g * y * (1.0 - y))),
            Op::Relu(x) => send(*x, g.zip_map(val(*x), |g, v| if v > 0.0 { g } else { 0.0 })),
            Op::Softplus(x) => send(*x, g.zip_map(val(*x), |g, v| g * sigmoid(v))),
            Op::Log(x) => send(*x, g.zip_map(val(*x), |g, v| g / v)),
            Op::Sqrt(x) => send(*x, g.zip_map(out, |g, y| g / (2.0 * y))),
            Op::Clamp(x, lo, hi) => send(
                *x,
                g.zip_map(val(*x), |g, v| if v >= *lo && v <= *hi { g } else { 0.0 }),
            ),
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                send(*x, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let m = val(*x);
                send(*x, Matrix::filled(m.rows(), m.cols(), g.item() / m.len() as f64));
            }
            Op::RowNorm(x) => {
                let xm = val(*x);
                let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                for r in 0..xm.rows() {
                    let n = row_norm(xm.row(r));
                    if n <= MIN_NORM {
                        continue;
                    }
                    let k = g.get(r, 0) / n;
                    for (o, v) in gx.row_mut(r).iter_mut().zip(xm.row(r)) {
                        *o = k * v;
                    }
                }
                send(*x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let (r, c) = val(*p).shape();
                    let slice = g.data()[start * c..(start + r) * c].to_vec();
                    send(*p, Matrix::new(r, c, slice).expect("shape recorded at forward"));
                    start += r;
                }
            }
            Op::GatherRows(x, idx) => {
                let xm = val(*x);
                let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                send(*x, gx);
            }
            Op::Exp0(v, c) => {
                let (vm, curv) = (val(*v), val(*c).item());
                let sqrt_c = curv.sqrt();
                let mut gv = Matrix::zeros(vm.rows(), vm.cols());
                let mut gc = 0.0;
                for r in 0..vm.rows() {
                    let row = vm.row(r);
                    let n2: f64 = row.iter().map(|x| x * x).sum();
                    let s = sqrt_c * n2.sqrt();
                    let ratio = tanh_ratio(s);
                    let slope = tanh_ratio_slope(s);
                    let d: f64 = row.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, x), gg) in gv.row_mut(r).iter_mut().zip(row).zip(g.row(r)) {
                        *o = ratio * gg + curv * slope * d * x;
                    }
                    gc += slope * n2 * 0.5 * d;
                }
                send(*v, gv);
                send(*c, Matrix::scalar(gc));
            }
            Op::Log0(y, c) => {
                let (ym, curv) = (val(*y), val(*c).item());
                let sqrt_c = curv.sqrt();
                let mut gy = Matrix::zeros(ym.rows(), ym.cols());
                let mut gc = 0.0;
                for r in 0..ym.rows() {
                    let row = ym.row(r);
                    let n2: f64 = row.iter().map(|x| x * x).sum();
                    let s = sqrt_c * n2.sqrt();
                    let clamped = s > ARTANH_MAX;
                    let ratio = artanh_ratio(s.min(ARTANH_MAX));
                    let d: f64 = row.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    if clamped {
                        // artanh(s_max)/s_max is constant in y.
                        for (o, gg) in gy.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o = ratio * gg;
                        }
                        continue;
                    }
                    let slope = artanh_ratio_slope(s);
                    for ((o, x), gg) in gy.row_mut(r).iter_mut().zip(row).zip(g.row(r)) {
                        *o = ratio * gg + curv * slope * d * x;
                    }
                    gc += slope * n2 * 0.5 * d;
                }
                send(*y, gy);
                send(*c, Matrix::scalar(gc));
            }
            Op::BallProject(x, c) => {
                let (xm, curv) = (val(*x), val(*c).item());
                let sqrt_c = curv.sqrt();
                let mut gx = g.clone();
                let mut gc = 0.0;
                for r in 0..xm.rows() {
                    let row = xm.row(r);
                    let n = row_norm(row);
                    let k = projection_scale(n, sqrt_c);
                    if k == 1.0 {
                        continue;
                    }
                    let gr = g.row(r);
                    let d: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, xv), gg) in gx.row_mut(r).iter_mut().zip(row).zip(gr) {
                        *o = k * (gg - d * xv / (n * n));
                    }
                    // Projected row is (1-ε) x / (√c ‖x‖), so d/dc = -y / (2c).
                    gc += -0.5 / curv * k * d;
                }
                send(*x, gx);
                send(*c, Matrix::scalar(gc));
            }
        }
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}
