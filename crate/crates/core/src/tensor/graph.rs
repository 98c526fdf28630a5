use std::collections::HashMap;
use std::sync::Arc;

use super::{invert_matrix, ParamId, ParamStore, Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Tanh(Var),
    Gelu(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    ScaleAlong(Var, Arc<Vec<T>>, Axis),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var, Axis),
    Slice(Var, usize, Axis),
    Concat(Vec<Var>, Axis),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Inverse(Var),
    Conv1x1 { x: Var, w: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations. Build one per step; `backward` may run once.
#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
    check_finite: bool,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

fn require_2d(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(TensorError::Invalid(format!("{op}: expected a 2-D tensor, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Graph<T> {
    /// Graph that records gradients for parameters and variables.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            grad_enabled: true,
            check_finite: cfg!(debug_assertions),
            backward_done: false,
        }
    }

    /// Graph for pure evaluation: nothing requires gradients.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    /// Reject non-finite op outputs with [`TensorError::NonFinite`].
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, requires_grad: requires_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Binds a stored parameter; repeated calls return the same handle so
    /// shared uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).value.clone(), true);
        self.bound.insert(id, v);
        v
    }

    /// Makes later `param(_, id)` calls resolve to `v`, so an existing
    /// variable can stand in for a stored parameter.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound.insert(id, v);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradients of every bound parameter, indexed like the store.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Option<Vec<T>>> {
        let mut out = vec![None; store.len()];
        for (&id, &v) in &self.bound {
            out[id.0] = self.nodes[v.0].grad.clone();
        }
        out
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var], name: &'static str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let va = self.value(a);
        Tensor::new(va.shape(), va.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::cast_from(s);
        let v = self.map(a, |x| x * s);
        self.push(v, Op::Scale(a, s), &[a], "scale")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, T::exp);
        self.push(v, Op::Exp(a), &[a], "exp")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, T::tanh);
        self.push(v, Op::Tanh(a), &[a], "tanh")
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (c, k, half) = (T::cast_from(GELU_C), T::cast_from(GELU_A), T::cast_from(0.5));
        let v = self.map(a, |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a), &[a], "gelu")
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d("matmul", self.value(a))?;
        let (k2, n) = require_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), k as isize, 1, self.value(b).data(), n as isize, 1, T::zero(), &mut out, n as isize, 1);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `[m,k] x [n,k]^T -> [m,n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d("matmul_nt", self.value(a))?;
        let (n, k2) = require_2d("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), k as isize, 1, self.value(b).data(), 1, k as isize, T::zero(), &mut out, n as isize, 1);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), &[a, b], "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        require_2d("transpose", self.value(a))?;
        let v = self.value(a).transposed();
        self.push(v, Op::Transpose(a), &[a], "transpose")
    }

    /// Adds a length-`n` row vector to every row of `[m,n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = require_2d("add_row", self.value(x))?;
        if self.value(bias).len() != n {
            return Err(shape_err("add_row", self.shape(x), self.shape(bias)));
        }
        let (xv, bv) = (self.value(x).data(), self.value(bias).data());
        let mut out = xv.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + bv[j];
            }
        }
        self.push(Tensor::new(&[m, n], out)?, Op::AddRow(x, bias), &[x, bias], "add_row")
    }

    fn scale_along(&mut self, x: Var, factors: &[f64], axis: Axis, name: &'static str) -> Result<Var> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let want = if axis == Axis::Rows { r } else { c };
        if factors.len() != want {
            return Err(shape_err(name, self.shape(x), &[factors.len()]));
        }
        let f: Vec<T> = factors.iter().map(|&v| T::cast_from(v)).collect();
        let xv = self.value(x);
        let mut out = xv.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                let s = if axis == Axis::Rows { f[i] } else { f[j] };
                out[i * c + j] = out[i * c + j] * s;
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        self.push(v, Op::ScaleAlong(x, Arc::new(f), axis), &[x], name)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        self.scale_along(x, factors, Axis::Rows, "scale_rows")
    }

    /// Multiplies column `j` by the constant `factors[j]`.
    pub fn scale_cols(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        self.scale_along(x, factors, Axis::Cols, "scale_cols")
    }

    /// Row-wise layer normalization over the last axis with affine gain and
    /// bias. Statistics are accumulated in double precision.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = require_2d("layer_norm", self.value(x))?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = T::cast_from(r);
            for j in 0..n {
                let h = T::cast_from((row[j].as_f64() - mean) * r);
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let v = Tensor::new(&[m, n], out)?;
        self.push(v, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias], "layer_norm")
    }

    /// Softmax of a 2-D tensor along `axis` (0: down columns, 1: along rows).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = require_2d("softmax", self.value(x))?;
        let axis = match axis {
            0 => Axis::Rows,
            1 => Axis::Cols,
            a => return Err(TensorError::Invalid(format!("softmax: axis {a} out of range"))),
        };
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for_each_group(r, c, axis, |idx| {
            let mx = idx.clone().map(|i| xv[i]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for i in idx.clone() {
                let e = (xv[i] - mx).exp();
                out[i] = e;
                total = total + e;
            }
            for i in idx {
                out[i] = out[i] / total;
            }
        });
        self.push(Tensor::new(&[r, c], out)?, Op::Softmax(x, axis), &[x], "softmax")
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = require_2d("slice_cols", self.value(x))?;
        if start + len > c {
            return Err(shape_err("slice_cols", self.shape(x), &[start, len]));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        self.push(Tensor::new(&[r, len], out)?, Op::Slice(x, start, Axis::Cols), &[x], "slice_cols")
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = require_2d("slice_rows", self.value(x))?;
        if start + len > r {
            return Err(shape_err("slice_rows", self.shape(x), &[start, len]));
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::new(&[len, c], out)?, Op::Slice(x, start, Axis::Rows), &[x], "slice_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Invalid("concat_cols: no inputs".into()))?;
        let (r, _) = require_2d("concat_cols", self.value(first))?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = require_2d("concat_cols", self.value(p))?;
            if pr != r {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let pv = self.value(p);
                let pc = pv.cols();
                out.extend_from_slice(&pv.data()[i * pc..(i + 1) * pc]);
            }
        }
        self.push(Tensor::new(&[r, total], out)?, Op::Concat(parts.to_vec(), Axis::Cols), parts, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Invalid("concat_rows: no inputs".into()))?;
        let (_, c) = require_2d("concat_rows", self.value(first))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = require_2d("concat_rows", self.value(p))?;
            if pc != c {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::new(&[rows, c], out)?, Op::Concat(parts.to_vec(), Axis::Rows), parts, "concat_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v.as_f64()).sum::<f64>();
        self.push(Tensor::scalar(T::cast_from(s)), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.value(x).data().iter().map(|v| v.as_f64()).sum::<f64>();
        self.push(Tensor::scalar(T::cast_from(s / n)), Op::Mean(x), &[x], "mean")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        self.push(v, Op::Reshape(x), &[x], "reshape")
    }

    /// Matrix inverse of a square 2-D tensor.
    pub fn inverse(&mut self, w: Var) -> Result<Var> {
        let (inv, _) = invert_matrix(self.value(w))?;
        self.push(inv, Op::Inverse(w), &[w], "inverse")
    }

    /// Per-position channel mixing: `x` is `[C, ...]`, `w` is `[C, C]`, and
    /// every spatial position's channel vector is multiplied by `w`.
    pub fn conv1x1(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, p) = (self.value(x).rows(), self.value(x).cols());
        let (co, ci) = require_2d("conv1x1", self.value(w))?;
        if ci != c || co != c {
            return Err(shape_err("conv1x1", self.shape(x), self.shape(w)));
        }
        let mut out = vec![T::zero(); c * p];
        T::gemm(c, c, p, self.value(w).data(), c as isize, 1, self.value(x).data(), p as isize, 1, T::zero(), &mut out, p as isize, 1);
        let v = Tensor::new(self.shape(x), out)?;
        self.push(v, Op::Conv1x1 { x, w }, &[x, w], "conv1x1")
    }

    /// Reverse sweep from a scalar `loss`. A graph supports one sweep; a
    /// second call returns [`TensorError::BackwardTwice`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar("backward"));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.as_deref() else { continue };
            backprop(before, &node.op, &node.value, g);
        }
        Ok(())
    }
}

/// Calls `f` with the flat indices of each softmax group.
fn for_each_group(
    r: usize,
    c: usize,
    axis: Axis,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    match axis {
        Axis::Cols => (0..r).for_each(|i| f((i * c..(i + 1) * c).step_by(1))),
        Axis::Rows => (0..c).for_each(|j| f((j..r * c).step_by(c))),
    }
}

fn grad_buf<T: Scalar>(nodes: &mut [Node<T>], v: Var) -> Option<&mut Vec<T>> {
    let n = &mut nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    let len = n.value.len();
    Some(n.grad.get_or_insert_with(|| vec![T::zero(); len]))
}

fn accumulate<T: Scalar>(nodes: &mut [Node<T>], v: Var, f: impl Fn(usize) -> T) {
    if let Some(buf) = grad_buf(nodes, v) {
        for (i, x) in buf.iter_mut().enumerate() {
            *x = *x + f(i);
        }
    }
}

fn backprop<T: Scalar>(nodes: &mut [Node<T>], op: &Op<T>, out: &Tensor<T>, g: &[T]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, *a, |i| g[i]);
            accumulate(nodes, *b, |i| g[i]);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, *a, |i| g[i]);
            accumulate(nodes, *b, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let bv = nodes[b.0].value.clone();
            let av = nodes[a.0].value.clone();
            accumulate(nodes, *a, |i| g[i] * bv.data()[i]);
            accumulate(nodes, *b, |i| g[i] * av.data()[i]);
        }
        Op::Scale(a, s) => accumulate(nodes, *a, |i| g[i] * *s),
        Op::Exp(a) => accumulate(nodes, *a, |i| g[i] * out.data()[i]),
        Op::Tanh(a) => accumulate(nodes, *a, |i| {
            let y = out.data()[i];
            g[i] * (T::one() - y * y)
        }),
        Op::Gelu(a) => {
            let xv = nodes[a.0].value.clone();
            let (c, k, half) = (T::cast_from(GELU_C), T::cast_from(GELU_A), T::cast_from(0.5));
            let three = T::cast_from(3.0);
            accumulate(nodes, *a, |i| {
                let x = xv.data()[i];
                let t = (c * (x + k * x * x * x)).tanh();
                let d = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
                g[i] * d
            });
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (nodes[a.0].value.clone(), nodes[b.0].value.clone());
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if let Some(ga) = grad_buf(nodes, *a) {
                T::gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, T::one(), ga, k as isize, 1);
            }
            if let Some(gb) = grad_buf(nodes, *b) {
                T::gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1);
            }
        }
        Op::MatMulNt(a, b) => {
            let (av, bv) = (nodes[a.0].value.clone(), nodes[b.0].value.clone());
            let (m, k, n) = (av.rows(), av.cols(), bv.rows());
            if let Some(ga) = grad_buf(nodes, *a) {
                T::gemm(m, n, k, g, n as isize, 1, bv.data(), k as isize, 1, T::one(), ga, k as isize, 1);
            }
            if let Some(gb) = grad_buf(nodes, *b) {
                T::gemm(n, m, k, g, 1, n as isize, av.data(), k as isize, 1, T::one(), gb, k as isize, 1);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.rows(), out.cols());
            // out is [r, c]; the input is [c, r].
            accumulate(nodes, *a, |idx| {
                let (i, j) = (idx / r, idx % r);
                g[j * c + i]
            });
        }
        Op::AddRow(x, bias) => {
            let n = out.cols();
            accumulate(nodes, *x, |i| g[i]);
            if let Some(gb) = grad_buf(nodes, *bias) {
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % n] = gb[i % n] + gi;
                }
            }
        }
        Op::ScaleAlong(x, f, axis) => {
            let c = out.cols();
            let axis = *axis;
            accumulate(nodes, *x, |i| g[i] * if axis == Axis::Rows { f[i / c] } else { f[i % c] });
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let n = out.cols();
            let m = out.rows();
            let gv = nodes[gain.0].value.clone();
            if let Some(gg) = grad_buf(nodes, *gain) {
                for i in 0..m * n {
                    gg[i % n] = gg[i % n] + g[i] * xhat[i];
                }
            }
            if let Some(gb) = grad_buf(nodes, *bias) {
                for i in 0..m * n {
                    gb[i % n] = gb[i % n] + g[i];
                }
            }
            if let Some(gx) = grad_buf(nodes, *x) {
                let inv_n = 1.0 / n as f64;
                for i in 0..m {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let d = (g[i * n + j] * gv.data()[j]).as_f64();
                        s1 += d;
                        s2 += d * xhat[i * n + j].as_f64();
                    }
                    let (m1, m2) = (s1 * inv_n, s2 * inv_n);
                    let r = rstd[i].as_f64();
                    for j in 0..n {
                        let d = (g[i * n + j] * gv.data()[j]).as_f64();
                        let v = r * (d - m1 - xhat[i * n + j].as_f64() * m2);
                        gx[i * n + j] = gx[i * n + j] + T::cast_from(v);
                    }
                }
            }
        }
        Op::Softmax(x, axis) => {
            let (r, c) = (out.rows(), out.cols());
            let y = out.data();
            if let Some(gx) = grad_buf(nodes, *x) {
                for_each_group(r, c, *axis, |idx| {
                    let s = idx.clone().map(|i| g[i] * y[i]).fold(T::zero(), |a, b| a + b);
                    for i in idx {
                        gx[i] = gx[i] + y[i] * (g[i] - s);
                    }
                });
            }
        }
        Op::Slice(x, start, axis) => {
            let (r, c) = (out.rows(), out.cols());
            let src_cols = nodes[x.0].value.cols();
            if let Some(gx) = grad_buf(nodes, *x) {
                match axis {
                    Axis::Cols => {
                        for i in 0..r {
                            for j in 0..c {
                                let d = &mut gx[i * src_cols + start + j];
                                *d = *d + g[i * c + j];
                            }
                        }
                    }
                    Axis::Rows => {
                        for (d, &s) in gx[start * c..(start + r) * c].iter_mut().zip(g) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
        Op::Concat(parts, axis) => {
            let (r, total) = (out.rows(), out.cols());
            let mut offset = 0;
            for &p in parts {
                let (pr, pc) = (nodes[p.0].value.rows(), nodes[p.0].value.cols());
                if let Some(gp) = grad_buf(nodes, p) {
                    match axis {
                        Axis::Cols => {
                            for i in 0..r {
                                for j in 0..pc {
                                    gp[i * pc + j] = gp[i * pc + j] + g[i * total + offset + j];
                                }
                            }
                        }
                        Axis::Rows => {
                            for (d, &s) in gp.iter_mut().zip(&g[offset * total..(offset + pr) * total]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
                offset += if *axis == Axis::Cols { pc } else { pr };
            }
        }
        Op::Sum(x) => accumulate(nodes, *x, |_| g[0]),
        Op::Mean(x) => {
            let n = T::cast_from(nodes[x.0].value.len().max(1) as f64);
            accumulate(nodes, *x, |_| g[0] / n);
        }
        Op::Reshape(x) => accumulate(nodes, *x, |i| g[i]),
        Op::Inverse(w) => {
            // d(W^-1) = -W^-T G W^-T
            let n = out.rows();
            let y = out.data();
            let mut tmp = vec![T::zero(); n * n];
            T::gemm(n, n, n, g, n as isize, 1, y, 1, n as isize, T::zero(), &mut tmp, n as isize, 1);
            let mut prod = vec![T::zero(); n * n];
            T::gemm(n, n, n, y, 1, n as isize, &tmp, n as isize, 1, T::zero(), &mut prod, n as isize, 1);
            accumulate(nodes, *w, |i| -prod[i]);
        }
        Op::Conv1x1 { x, w } => {
            let (xv, wv) = (nodes[x.0].value.clone(), nodes[w.0].value.clone());
            let (c, p) = (xv.rows(), xv.cols());
            if let Some(gw) = grad_buf(nodes, *w) {
                T::gemm(c, p, c, g, p as isize, 1, xv.data(), 1, p as isize, T::one(), gw, c as isize, 1);
            }
            if let Some(gx) = grad_buf(nodes, *x) {
                T::gemm(c, c, p, wv.data(), 1, c as isize, g, p as isize, 1, T::one(), gx, p as isize, 1);
            }
        }
    }
}
