//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation executed on it in order, so the record
//! list is already a topological order of the computation. [`Tape::backward`]
//! walks it once in reverse.

use std::rc::Rc;
use std::sync::atomic::{AtomicU32, Ordering};

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    LeakyRelu(f64),
    Elu,
    Tanh,
    Sigmoid,
    Square,
    Sqrt,
    Abs,
    Exp,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Elu => "elu",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Abs => "abs",
            Unary::Exp => "exp",
        }
    }

    fn has_kink(self) -> bool {
        matches!(self, Unary::Relu | Unary::LeakyRelu(_) | Unary::Abs)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Exp => x.exp(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
            Unary::Abs => x.signum(),
            Unary::Exp => y,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulConst(usize, Rc<[f64]>),
    MatMul { a: usize, b: usize, trans_b: bool },
    Unary(usize, Unary),
    Sum(usize),
    Reshape(usize),
    Narrow { x: usize, axis: usize, start: usize },
    Concat { xs: Vec<usize>, axis: usize },
    NodeMix { p: usize, h: usize },
    GatherRows { x: usize, idx: Rc<[usize]> },
    ScatterAddRows { x: usize, idx: Rc<[usize]> },
    SegmentSoftmax { x: usize, seg: Rc<[usize]>, nseg: usize },
    MulCol { x: usize, a: usize },
    RowSoftmax(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed differentiable operations.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    bound: Vec<Var>,
    nearest_kink: Option<(f64, &'static str)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            bound: Vec::new(),
            nearest_kink: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn ix(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx as usize >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "variable {v:?} does not belong to this tape"
            )));
        }
        Ok(v.idx as usize)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            idx: idx as u32,
        })
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "leaf")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Records every parameter of `store` as a leaf; fetch them with [`Tape::param`].
    pub fn bind(&mut self, store: &ParamStore, requires_grad: bool) -> Result<()> {
        self.bound.clear();
        for t in store.tensors() {
            let v = self.push(t.clone(), Op::Leaf, requires_grad, "param")?;
            self.bound.push(v);
        }
        Ok(())
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.bound[id.0]
    }

    pub fn bound_params(&self) -> &[Var] {
        &self.bound
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.ix(v).expect("foreign variable");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Smallest distance of any recorded ReLU/LeakyReLU/abs input to its kink,
    /// over inputs that carry gradient.
    pub fn nearest_kink(&self) -> Option<(f64, &'static str)> {
        self.nearest_kink
    }

    fn same_shape(&self, a: usize, b: usize, op: &str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return shape_err(format!(
                "{op}: {:?} vs {:?}",
                self.val(a).shape(),
                self.val(b).shape()
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64, mk: fn(usize, usize) -> Op) -> Result<Var> {
        let (a, b) = (self.ix(a)?, self.ix(b)?);
        self.same_shape(a, b, op)?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.val(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, mk(a, b), rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Adds `b` (shape = last extent of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.ix(a)?, self.ix(b)?);
        let c = *self.val(ai).shape().last().unwrap_or(&1);
        if self.val(bi).len() != c {
            return shape_err(format!(
                "add_row: {:?} + {:?}",
                self.val(ai).shape(),
                self.val(bi).shape()
            ));
        }
        let bias = self.val(bi).data();
        let mut data = self.val(ai).data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let t = Tensor::new(self.val(ai).shape().to_vec(), data)?;
        let rg = self.rg(ai) || self.rg(bi);
        self.push(t, Op::AddRow(ai, bi), rg, "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ai = self.ix(a)?;
        let data = self.val(ai).data().iter().map(|x| x * s).collect();
        let t = Tensor::new(self.val(ai).shape().to_vec(), data)?;
        let rg = self.rg(ai);
        self.push(t, Op::Scale(ai, s), rg, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let ai = self.ix(a)?;
        let data = self.val(ai).data().iter().map(|x| x + s).collect();
        let t = Tensor::new(self.val(ai).shape().to_vec(), data)?;
        let rg = self.rg(ai);
        self.push(t, Op::AddScalar(ai), rg, "add_scalar")
    }

    /// Elementwise product with a constant array (e.g. a mask).
    pub fn mul_const(&mut self, a: Var, c: Rc<[f64]>) -> Result<Var> {
        let ai = self.ix(a)?;
        if c.len() != self.val(ai).len() {
            return shape_err("mul_const: length mismatch");
        }
        let data = self.val(ai).data().iter().zip(c.iter()).map(|(x, m)| x * m).collect();
        let t = Tensor::new(self.val(ai).shape().to_vec(), data)?;
        let rg = self.rg(ai);
        self.push(t, Op::MulConst(ai, c), rg, "mul_const")
    }

    /// `a @ b` for matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` for matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ai, bi) = (self.ix(a)?, self.ix(b)?);
        let [m, k] = self.val(ai).dims2()?;
        let [b0, b1] = self.val(bi).dims2()?;
        let (k2, n) = if trans_b { (b1, b0) } else { (b0, b1) };
        if k != k2 {
            return shape_err(format!(
                "matmul: {:?} x {:?}{}",
                self.val(ai).shape(),
                self.val(bi).shape(),
                if trans_b { "^T" } else { "" }
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.val(ai).data(), false, self.val(bi).data(), trans_b, &mut out, false);
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a: ai, b: bi, trans_b }, rg, "matmul")
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let ai = self.ix(a)?;
        if u.has_kink() && self.rg(ai) {
            let d = self.val(ai).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
            if self.nearest_kink.map_or(true, |(best, _)| d < best) {
                self.nearest_kink = Some((d, u.name()));
            }
        }
        let data = self.val(ai).data().iter().map(|&x| u.apply(x)).collect();
        let t = Tensor::new(self.val(ai).shape().to_vec(), data)?;
        let rg = self.rg(ai);
        self.push(t, Op::Unary(ai, u), rg, u.name())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Unary::LeakyRelu(slope))
    }
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Elu)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.ix(a)?;
        let s = self.val(ai).data().iter().sum();
        let rg = self.rg(ai);
        self.push(Tensor::scalar(s), Op::Sum(ai), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return shape_err("mean of empty tensor");
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ai = self.ix(a)?;
        let t = self.val(ai).clone().reshape(shape)?;
        let rg = self.rg(ai);
        self.push(t, Op::Reshape(ai), rg, "reshape")
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ai = self.ix(a)?;
        let shape = self.val(ai).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err(format!("narrow axis {axis} [{start}, {}) of {shape:?}", start + len));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.val(ai).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(ai);
        self.push(Tensor::new(out_shape, data)?, Op::Narrow { x: ai, axis, start }, rg, "narrow")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return shape_err("concat of nothing");
        }
        let ids: Vec<usize> = xs.iter().map(|&v| self.ix(v)).collect::<Result<_>>()?;
        let first = self.val(ids[0]).shape().to_vec();
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} on {first:?}"));
        }
        let mut total = 0;
        for &i in &ids {
            let s = self.val(i).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return shape_err(format!("concat: {first:?} vs {s:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &ids {
                let ext = self.val(i).shape()[axis];
                let src = self.val(i).data();
                data.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = ids.iter().any(|&i| self.rg(i));
        self.push(Tensor::new(shape, data)?, Op::Concat { xs: ids, axis }, rg, "concat")
    }

    /// `out[g] = p @ h[g]` for `p: [N, N]` and `h: [..., N, C]`.
    pub fn node_mix(&mut self, p: Var, h: Var) -> Result<Var> {
        let (pi, hi) = (self.ix(p)?, self.ix(h)?);
        let [n, n2] = self.val(pi).dims2()?;
        let hs = self.val(hi).shape().to_vec();
        if n != n2 || hs.len() < 2 || hs[hs.len() - 2] != n2 {
            return shape_err(format!("node_mix: {:?} with {:?}", self.val(pi).shape(), hs));
        }
        let c = hs[hs.len() - 1];
        let groups: usize = hs[..hs.len() - 2].iter().product();
        let mut out = vec![0.0; groups * n * c];
        let pd = self.val(pi).data();
        let hd = self.val(hi).data();
        for g in 0..groups {
            let r = g * n * c..(g + 1) * n * c;
            gemm(n, n, c, pd, false, &hd[r.clone()], false, &mut out[r], false);
        }
        let rg = self.rg(pi) || self.rg(hi);
        self.push(Tensor::new(hs, out)?, Op::NodeMix { p: pi, h: hi }, rg, "node_mix")
    }

    /// `out[e] = x[idx[e]]` for a matrix `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let xi = self.ix(x)?;
        let [r, c] = self.val(xi).dims2()?;
        if idx.iter().any(|&i| i >= r) {
            return shape_err(format!("gather_rows: index out of range for {r} rows"));
        }
        let src = self.val(xi).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(xi);
        let t = Tensor::new(vec![idx.len(), c], data)?;
        self.push(t, Op::GatherRows { x: xi, idx }, rg, "gather_rows")
    }

    /// `out[idx[e]] += x[e]` into a `rows x C` zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Rc<[usize]>, rows: usize) -> Result<Var> {
        let xi = self.ix(x)?;
        let [e, c] = self.val(xi).dims2()?;
        if idx.len() != e || idx.iter().any(|&i| i >= rows) {
            return shape_err("scatter_add_rows: bad index list");
        }
        let src = self.val(xi).data();
        let mut data = vec![0.0; rows * c];
        for (k, &i) in idx.iter().enumerate() {
            for (o, s) in data[i * c..(i + 1) * c].iter_mut().zip(&src[k * c..(k + 1) * c]) {
                *o += s;
            }
        }
        let rg = self.rg(xi);
        let t = Tensor::new(vec![rows, c], data)?;
        self.push(t, Op::ScatterAddRows { x: xi, idx }, rg, "scatter_add_rows")
    }

    /// Softmax of the entries of `x` (one per edge) within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: Rc<[usize]>, nseg: usize) -> Result<Var> {
        let xi = self.ix(x)?;
        let xs = self.val(xi).data();
        if xs.len() != seg.len() || seg.iter().any(|&s| s >= nseg) {
            return shape_err("segment_softmax: segment list does not match input");
        }
        let mut mx = vec![f64::NEG_INFINITY; nseg];
        for (&v, &s) in xs.iter().zip(seg.iter()) {
            mx[s] = mx[s].max(v);
        }
        let mut denom = vec![0.0; nseg];
        let mut out: Vec<f64> = xs
            .iter()
            .zip(seg.iter())
            .map(|(&v, &s)| {
                let e = (v - mx[s]).exp();
                denom[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(seg.iter()) {
            *o /= denom[s];
        }
        let rg = self.rg(xi);
        let t = Tensor::new(self.val(xi).shape().to_vec(), out)?;
        self.push(t, Op::SegmentSoftmax { x: xi, seg, nseg }, rg, "segment_softmax")
    }

    /// Scales row `e` of `x: [E, C]` by `a[e]`.
    pub fn mul_col(&mut self, x: Var, a: Var) -> Result<Var> {
        let (xi, ai) = (self.ix(x)?, self.ix(a)?);
        let [e, c] = self.val(xi).dims2()?;
        if self.val(ai).len() != e {
            return shape_err("mul_col: one scale per row required");
        }
        let s = self.val(ai).data();
        let mut data = self.val(xi).data().to_vec();
        for (row, &k) in data.chunks_mut(c.max(1)).zip(s) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        let rg = self.rg(xi) || self.rg(ai);
        self.push(Tensor::new(vec![e, c], data)?, Op::MulCol { x: xi, a: ai }, rg, "mul_col")
    }

    /// Softmax along the last axis.
    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let xi = self.ix(x)?;
        let shape = self.val(xi).shape().to_vec();
        let c = *shape.last().ok_or_else(|| Error::Shape("row_softmax of scalar".into()))?;
        let mut data = self.val(xi).data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(xi);
        self.push(Tensor::new(shape, data)?, Op::RowSoftmax(xi), rg, "row_softmax")
    }

    /// `x @ w + b` along the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().ok_or_else(|| Error::Shape("linear on scalar".into()))?;
        let rows = shape.iter().product::<usize>() / k.max(1);
        let flat = if shape.len() == 2 { x } else { self.reshape(x, &[rows, k])? };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_row(y, b)?;
        }
        if shape.len() == 2 {
            return Ok(y);
        }
        let n = self.shape(y)[1];
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = n;
        self.reshape(y, &out_shape)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.ix(loss)?;
        if self.val(li).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(li).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut Vec<f64>> {
        if !self.rg(i) {
            return None;
        }
        let n = self.val(i).len();
        Some(grads[i].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &x in [a, b] {
                    if let Some(s) = self.slot(grads, x) {
                        s.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, g), y) in s.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((d, g), x) in s.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                let c = self.val(*b).len();
                if let Some(s) = self.slot(grads, *b) {
                    for row in g.chunks(c.max(1)) {
                        s.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, g)| *d += k * g);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::MulConst(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, g), m) in s.iter_mut().zip(g).zip(c.iter()) {
                        *d += g * m;
                    }
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let [m, k] = self.val(*a).dims2()?;
                let n = out.shape()[1];
                if let Some(s) = self.slot(grads, *a) {
                    // dA = G @ op(B)^T
                    gemm(m, n, k, g, false, self.val(*b).data(), !trans_b, s, true);
                }
                let ad = self.val(*a).data();
                if let Some(s) = self.slot(grads, *b) {
                    if *trans_b {
                        // B is [n, k]: dB = G^T @ A
                        gemm(n, m, k, g, true, ad, false, s, true);
                    } else {
                        gemm(k, m, n, ad, true, g, false, s, true);
                    }
                }
            }
            Op::Unary(a, u) => {
                let x = self.val(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for (((d, g), &xv), &yv) in s.iter_mut().zip(g).zip(x).zip(out.data()) {
                        *d += g * u.deriv(xv, yv);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.val(*x).shape().to_vec();
                let len = out.shape()[*axis];
                let (outer, ext, inner) = split_axis(&shape, *axis);
                if let Some(s) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let base = o * ext * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        s[base..base + len * inner].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let ext = self.val(x).shape()[*axis];
                    if let Some(s) = self.slot(grads, x) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                            s[o * ext * inner..(o + 1) * ext * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                    offset += ext;
                }
            }
            Op::NodeMix { p, h } => {
                let n = self.val(*p).shape()[0];
                let c = *out.shape().last().unwrap();
                let groups = out.len() / (n * c).max(1);
                let pd = self.val(*p).data();
                let hd = self.val(*h).data();
                if let Some(s) = self.slot(grads, *h) {
                    for gi in 0..groups {
                        let r = gi * n * c..(gi + 1) * n * c;
                        gemm(n, n, c, pd, true, &g[r.clone()], false, &mut s[r], true);
                    }
                }
                if let Some(s) = self.slot(grads, *p) {
                    for gi in 0..groups {
                        let r = gi * n * c..(gi + 1) * n * c;
                        gemm(n, c, n, &g[r.clone()], false, &hd[r], true, s, true);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let c = out.shape()[1];
                if let Some(s) = self.slot(grads, *x) {
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, gv) in s[r * c..(r + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::ScatterAddRows { x, idx } => {
                let c = out.shape()[1];
                if let Some(s) = self.slot(grads, *x) {
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, gv) in s[k * c..(k + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, seg, nseg } => {
                let y = out.data();
                let mut dot = vec![0.0; *nseg];
                for ((&yv, &gv), &s) in y.iter().zip(g).zip(seg.iter()) {
                    dot[s] += yv * gv;
                }
                if let Some(s) = self.slot(grads, *x) {
                    for (k, d) in s.iter_mut().enumerate() {
                        *d += y[k] * (g[k] - dot[seg[k]]);
                    }
                }
            }
            Op::MulCol { x, a } => {
                let c = out.shape()[1];
                let av = self.val(*a).data();
                let xv = self.val(*x).data();
                if let Some(s) = self.slot(grads, *x) {
                    for (k, &kv) in av.iter().enumerate() {
                        for j in k * c..(k + 1) * c {
                            s[j] += g[j] * kv;
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *a) {
                    for (k, d) in s.iter_mut().enumerate() {
                        *d += (k * c..(k + 1) * c).map(|j| g[j] * xv[j]).sum::<f64>();
                    }
                }
            }
            Op::RowSoftmax(x) => {
                let c = *out.shape().last().unwrap();
                let y = out.data();
                if let Some(s) = self.slot(grads, *x) {
                    for r in 0..y.len() / c.max(1) {
                        let rr = r * c..(r + 1) * c;
                        let dot: f64 = y[rr.clone()].iter().zip(&g[rr.clone()]).map(|(a, b)| a * b).sum();
                        for j in rr {
                            s[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or zeros when the loss does
    /// not depend on it. `None` if `v` is foreign to the tape.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        let i = v.idx as usize;
        let shape = self.shapes.get(i)?.clone();
        let data = match &self.grads[i] {
            Some(g) => g.clone(),
            None => vec![0.0; shape.iter().product()],
        };
        Tensor::new(shape, data).ok()
    }

    /// Gradients for every parameter bound on `tape`, in store order.
    pub fn params(&self, tape: &Tape) -> Vec<Tensor> {
        tape.bound_params()
            .iter()
            .map(|&v| self.wrt(v).expect("bound parameter"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![2.0, -3.0])).unwrap();
        let xx = t.mul(x, x).unwrap();
        let s = t.sum(xx).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[4.0, -6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0])).unwrap();
        assert!(matches!(t.sqrt(x), Err(Error::NonFinite { op: "sqrt" })));
        assert!(t.leaf(Tensor::vector(vec![f64::NAN])).is_err());
    }

    #[test]
    fn constants_get_no_gradient_slot() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let c = t.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let p = t.mul(x, c).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.wrt(c).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn narrow_and_concat_invert() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = t.leaf(Tensor::new(vec![2, 3, 4], data).unwrap()).unwrap();
        let a = t.narrow(x, 1, 0, 1).unwrap();
        let b = t.narrow(x, 1, 1, 2).unwrap();
        let y = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn segment_softmax_sums_to_one_per_segment() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, -1.0, 0.5])).unwrap();
        let seg: Rc<[usize]> = vec![0, 0, 1, 1, 1].into();
        let y = t.segment_softmax(x, seg, 2).unwrap();
        let v = t.value(y).data();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] + v[3] + v[4] - 1.0).abs() < 1e-15);
    }
}
