//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! indices of its parents. Parents always precede children, so a single
//! reverse sweep over the node list visits every node after all of its
//! consumers and gradient accumulation over fan-out falls out naturally.

use std::sync::Arc;

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product for an operation whose forward pass is computed
/// outside the tape.
///
/// `inputs` are the values of the parent nodes in the order they were passed
/// to [`Tape::custom`]. The returned vector has one entry per input; `None`
/// means no gradient flows to that input.
pub trait CustomBackward: Send + Sync {
    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Sin(usize),
    Cos(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Square(usize),
    SoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { src: usize, start: usize },
    Gather { src: usize, index: Arc<Vec<usize>> },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    Custom { inputs: Vec<usize>, backward: Box<dyn CustomBackward> },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if no
    /// differentiable path connects them.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `c = a · b (+ c)` with explicit strides, so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices sized for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        None => *slot = Some(g),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.push_arc(value, Op::Leaf, false)
    }

    /// A trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A trainable leaf sharing storage with the caller.
    pub fn param_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.push_arc(value, Op::Leaf, true)
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, mk(a.0, b.0), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a.0]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("div", a, b, |x, y| x / y, Op::Div)
    }

    /// `x (m×n) + row (1×n)`, broadcasting the row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (m, n) = tx.dims2("add_row")?;
        if tr.len() != n {
            return Err(shape_err("add_row", tx, tr));
        }
        let mut data = tx.data().to_vec();
        for r in 0..m {
            data[r * n..(r + 1) * n]
                .iter_mut()
                .zip(tr.data())
                .for_each(|(d, b)| *d += b);
        }
        let out = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[x.0, row.0]);
        Ok(self.push(out, Op::AddRow(x.0, row.0), rg))
    }

    /// `x (m×n) * col (m×1)`, scaling row `i` by `col[i]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(col));
        let (m, n) = tx.dims2("mul_col")?;
        if tc.len() != m {
            return Err(shape_err("mul_col", tx, tc));
        }
        let mut data = tx.data().to_vec();
        for r in 0..m {
            let s = tc.data()[r];
            data[r * n..(r + 1) * n].iter_mut().for_each(|d| *d *= s);
        }
        let out = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[x.0, col.0]);
        Ok(self.push(out, Op::MulCol(x.0, col.0), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::Offset(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            &mut out,
            false,
        );
        let out = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Matmul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = ta.data()[r * n + c];
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::Transpose(a.0), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("softmax_rows")?;
        let mut out = ta.data().to_vec();
        for r in 0..m {
            softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        let out = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::SoftmaxRows(a.0), rg))
    }

    /// Concatenate 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(DiffError::InvalidArgument("concat_cols of nothing".into()));
        }
        let (m, _) = self.value(parts[0]).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_cols")?;
            if pm != m {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::matrix(m, total, out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(out, Op::ConcatCols(ids), rg))
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(DiffError::InvalidArgument("concat_rows of nothing".into()));
        }
        let (_, n) = self.value(parts[0]).dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_rows")?;
            if pn != n {
                return Err(shape_err("concat_rows", self.value(parts[0]), self.value(p)));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, n, out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(out, Op::ConcatRows(ids), rg))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("slice_cols")?;
        if start + len > n {
            return Err(DiffError::InvalidArgument(format!(
                "slice_cols {start}..{} out of range for shape {:?}",
                start + len,
                ta.shape()
            )));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&ta.data()[r * n + start..r * n + start + len]);
        }
        let out = Tensor::matrix(m, len, out)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::SliceCols { src: a.0, start }, rg))
    }

    /// `out.flat[i] = a.flat[index[i]]`. Backward scatter-adds, so repeated
    /// indices accumulate.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<usize>>, shape: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.len()) {
            return Err(DiffError::InvalidArgument(format!(
                "gather index {bad} out of range for {} values",
                ta.len()
            )));
        }
        let data = index.iter().map(|&i| ta.data()[i]).collect();
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::Gather { src: a.0, index }, rg))
    }

    /// Select whole rows of a 2-D tensor.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2("gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(DiffError::InvalidArgument(format!(
                "gather_rows row {bad} out of range for {m} rows"
            )));
        }
        let index: Vec<usize> = rows.iter().flat_map(|&r| r * n..(r + 1) * n).collect();
        self.gather(a, Arc::new(index), vec![rows.len(), n])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = (*self.nodes[a.0].value).clone().reshaped(shape)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::Reshape(a.0), rg))
    }

    /// Value-identical copy through which no gradient flows.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = Arc::clone(&self.nodes[a.0].value);
        self.push_arc(value, Op::Leaf, false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Records an operation whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, backward: Box<dyn CustomBackward>) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let rg = self.rg(&ids);
        self.push(output, Op::Custom { inputs: ids, backward }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(DiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |i: usize| -> &Tensor { &self.nodes[i].value };
        let wants = |i: usize| self.nodes[i].requires_grad;
        let send = |i: usize, gi: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if wants(i) {
                accumulate(&mut grads[i], gi);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.to_vec(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.iter().map(|v| -v).collect(), grads);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    send(*a, g.iter().zip(tb).map(|(g, y)| g * y).collect(), grads);
                }
                if wants(*b) {
                    send(*b, g.iter().zip(ta).map(|(g, x)| g * x).collect(), grads);
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    send(*a, g.iter().zip(tb).map(|(g, y)| g / y).collect(), grads);
                }
                if wants(*b) {
                    let gb = g
                        .iter()
                        .zip(ta.iter().zip(tb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    send(*b, gb, grads);
                }
            }
            Op::AddRow(x, row) => {
                send(*x, g.to_vec(), grads);
                if wants(*row) {
                    let n = val(*row).len();
                    let mut gr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(a, v)| *a += v);
                    }
                    send(*row, gr, grads);
                }
            }
            Op::MulCol(x, col) => {
                let tc = val(*col).data();
                let n = out.shape()[1];
                if wants(*x) {
                    let gx = g.iter().enumerate().map(|(i, v)| v * tc[i / n]).collect();
                    send(*x, gx, grads);
                }
                if wants(*col) {
                    let tx = val(*x).data();
                    let gc = g
                        .chunks(n)
                        .zip(tx.chunks(n))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    send(*col, gc, grads);
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|v| v * s).collect(), grads),
            Op::Offset(a) | Op::Reshape(a) => send(*a, g.to_vec(), grads),
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, n as isize, 1, tb.data(), 1, n as isize, &mut ga, false);
                    send(*a, ga, grads);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), 1, k as isize, g, n as isize, 1, &mut gb, false);
                    send(*b, gb, grads);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (out.shape()[0], out.shape()[1]);
                let mut ga = vec![0.0; m * n];
                for r in 0..n {
                    for c in 0..m {
                        ga[c * n + r] = g[r * m + c];
                    }
                }
                send(*a, ga, grads);
            }
            Op::Exp(a) => send(*a, g.iter().zip(out.data()).map(|(g, y)| g * y).collect(), grads),
            Op::Sin(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| g * x.cos()).collect(), grads);
            }
            Op::Cos(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| -g * x.sin()).collect(), grads);
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                send(*a, ga, grads);
            }
            Op::Sigmoid(a) => {
                let ga = g.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                send(*a, ga, grads);
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect(), grads);
            }
            Op::Square(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(), grads);
            }
            Op::SoftmaxRows(a) => {
                let n = out.shape()[1];
                let mut ga = vec![0.0; g.len()];
                for ((gr, sr), dst) in g.chunks(n).zip(out.data().chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dst[j] = sr[j] * (gr[j] - dot);
                    }
                }
                send(*a, ga, grads);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (out.shape()[0], out.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    if wants(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        send(p, gp, grads);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if wants(p) {
                        send(p, g[offset..offset + len].to_vec(), grads);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { src, start } => {
                let (m, n) = (val(*src).shape()[0], val(*src).shape()[1]);
                let len = out.shape()[1];
                let mut gs = vec![0.0; m * n];
                for r in 0..m {
                    gs[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                send(*src, gs, grads);
            }
            Op::Gather { src, index } => {
                let mut gs = vec![0.0; val(*src).len()];
                for (&i, v) in index.iter().zip(g) {
                    gs[i] += v;
                }
                send(*src, gs, grads);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()], grads),
            Op::Mean(a) => {
                let n = val(*a).len();
                send(*a, vec![g[0] / n.max(1) as f64; n], grads);
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                let gs = backward.backward(g, &ins, out);
                for (&i, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        debug_assert_eq!(gi.len(), val(i).len(), "custom backward gradient length");
                        send(i, gi, grads);
                    }
                }
            }
        }
    }
}

/// In-place numerically stable softmax of a slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Stable scalar activations shared with callers that evaluate outside a tape.
pub mod activation {
    pub fn sigmoid(x: f64) -> f64 {
        super::sigmoid(x)
    }

    pub fn softplus(x: f64) -> f64 {
        super::softplus(x)
    }
}
