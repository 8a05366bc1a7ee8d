//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its value and the parents it was
//! computed from. Node ids only ever refer backwards, so the node vector is
//! already in topological order and `backward` is a single reverse sweep.

use super::kernels;
use super::{gemm, Result, Tensor, TensorError};
use std::cell::RefCell;
use std::sync::Arc;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Tanh,
    Silu,
    Sin,
    Cos,
    Exp,
    Abs,
    Square,
    Relu,
    Softplus,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Silu => "silu",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Exp => "exp",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Relu => "relu",
            Unary::Softplus => "softplus",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Silu => x * sigmoid(x),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Relu => x.max(0.0),
            Unary::Softplus => softplus(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
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
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Univariate kernels summed by [`Tape::kernel_sum`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// `exp(-a·|x − c|)`; `a` is an inverse scale.
    Laplace,
    /// Ricker wavelet `(1 − u²)·exp(−u²/2)` with `u = (x − c)/a`.
    Ricker,
}

impl Kernel {
    /// Value and derivatives w.r.t. `x`, `c` and `a` of the unweighted term.
    #[inline(always)]
    #[cfg(test)]
    pub(crate) fn eval(self, x: f64, c: f64, a: f64) -> (f64, f64, f64, f64) {
        let d = x - c;
        match self {
            Kernel::Laplace => {
                let e = (-a * d.abs()).exp();
                let sg = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (e, -a * e * sg, a * e * sg, -e * d.abs())
            }
            Kernel::Ricker => {
                let inv = 1.0 / a;
                let u = d * inv;
                let g = (-0.5 * u * u).exp();
                let f = (1.0 - u * u) * g;
                let fp = u * (u * u - 3.0) * g;
                (f, fp * inv, -fp * inv, -fp * u * inv)
            }
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulColsConst(Var, Arc<Vec<f64>>),
    ConcatCols(Vec<Var>),
    RowMeanSubsets(Var, Arc<Vec<Vec<usize>>>),
    GatherRows(Var, Arc<Vec<usize>>),
    RepeatCols(Var, usize),
    Unary(Var, Unary),
    ReduceSum(Var),
    Mean(Var),
    RowSum(Var),
    SoftmaxRows(Var),
    CrossEntropy(Var, Arc<Vec<usize>>),
    NormalizeRows(Var),
    Expand(Var, usize, Tensor),
    KernelSum {
        x: Var,
        w: Var,
        c: Var,
        a: Var,
        per_input: usize,
        kernel: Kernel,
        /// Per-term exponentials from the forward pass, row `(r, j)` at
        /// offset `(r·out + j)·width`; kept when small enough.
        cache: Option<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        })
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = check("matmul", self.value(a).matmul(self.value(b))?)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; the natural form for `X · Wᵀ` with `W` stored out×in.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = check("matmul_t", self.value(a).matmul_t(self.value(b))?)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMulT(a, b), rg))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        check(op, Tensor::from_vec(ta.rows(), ta.cols(), data)?)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a `1 × c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: tx.shape(),
                rhs: tr.shape(),
            });
        }
        let mut out = tx.clone();
        for r in 0..out.rows() {
            out.row_mut(r).iter_mut().zip(tr.data()).for_each(|(o, b)| *o += b);
        }
        let out = check("add_row", out)?;
        let rg = self.rg(&[x, row]);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = check("scale", self.value(x).map(|v| v * s))?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Scale(x, s), rg))
    }

    /// Multiplies column `c` of `x` by the constant `factors[c]`.
    pub fn mul_cols_const(&mut self, x: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let tx = self.value(x);
        if factors.len() != tx.cols() {
            return Err(TensorError::Shape {
                op: "mul_cols_const",
                lhs: tx.shape(),
                rhs: (1, factors.len()),
            });
        }
        let mut out = tx.clone();
        for r in 0..out.rows() {
            out.row_mut(r).iter_mut().zip(factors.iter()).for_each(|(o, f)| *o *= f);
        }
        let out = check("mul_cols_const", out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MulColsConst(x, factors), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: (rows, cols),
                    rhs: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row `i` of the output is the mean of the rows of `x` listed in
    /// `sets[i]`; an empty set yields a zero row.
    pub fn row_mean_subsets(&mut self, x: Var, sets: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let tx = self.value(x);
        let mut out = Tensor::zeros(sets.len(), tx.cols());
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let row = out.row_mut(i);
            for &j in set {
                if j >= tx.rows() {
                    return Err(TensorError::Index {
                        index: j,
                        len: tx.rows(),
                    });
                }
                row.iter_mut().zip(tx.row(j)).for_each(|(o, v)| *o += v);
            }
            let inv = 1.0 / set.len() as f64;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RowMeanSubsets(x, sets), rg))
    }

    /// Single-subset form: a `1 × c` mean of the listed rows.
    pub fn row_mean_subset(&mut self, x: Var, subset: &[usize]) -> Result<Var> {
        self.row_mean_subsets(x, Arc::new(vec![subset.to_vec()]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).select_rows(&idx)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GatherRows(x, idx), rg))
    }

    /// Repeats each column `times` times in place: `[a, b] → [a, a, b, b]`.
    pub fn repeat_cols(&mut self, x: Var, times: usize) -> Result<Var> {
        let tx = self.value(x);
        let mut out = Tensor::zeros(tx.rows(), tx.cols() * times);
        for r in 0..tx.rows() {
            let src = tx.row(r);
            let dst = out.row_mut(r);
            for (c, &v) in src.iter().enumerate() {
                dst[c * times..(c + 1) * times].iter_mut().for_each(|o| *o = v);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RepeatCols(x, times), rg))
    }

    fn unary(&mut self, x: Var, u: Unary) -> Result<Var> {
        let v = check(u.name(), self.value(x).map(|v| u.apply(v)))?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Unary(x, u), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Silu)
    }
    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sin)
    }
    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Cos)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    pub fn reduce_sum(&mut self, x: Var) -> Result<Var> {
        let s = check("reduce_sum", Tensor::scalar(self.value(x).data().iter().sum()))?;
        let rg = self.rg(&[x]);
        Ok(self.push(s, Op::ReduceSum(x), rg))
    }

    /// Mean of all entries; an empty tensor has mean 0.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = if t.is_empty() {
            0.0
        } else {
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let s = check("mean", Tensor::scalar(m))?;
        let rg = self.rg(&[x]);
        Ok(self.push(s, Op::Mean(x), rg))
    }

    /// `n × c → n × 1` row sums.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::from_fn(t.rows(), 1, |r, _| t.row(r).iter().sum());
        let out = check("row_sum", out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RowSum(x), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = check("softmax_rows", softmax_rows(self.value(x)))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Mean negative log-likelihood of `targets[r]` under `softmax(logits[r])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(logits);
        if targets.len() != t.rows() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: t.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= t.cols() {
                return Err(TensorError::Index {
                    index: y,
                    len: t.cols(),
                });
            }
            let row = t.row(r);
            total += log_sum_exp(row) - row[y];
        }
        let loss = if t.rows() == 0 { 0.0 } else { total / t.rows() as f64 };
        let s = check("cross_entropy", Tensor::scalar(loss))?;
        let rg = self.rg(&[logits]);
        Ok(self.push(s, Op::CrossEntropy(logits, targets), rg))
    }

    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let out = check("normalize_rows", self.value(x).normalize_rows())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::NormalizeRows(x), rg))
    }

    /// Expands each input column into `per_input` features whose values and
    /// derivatives (w.r.t. that input entry) are supplied by the caller.
    ///
    /// Output column `i·per_input + b` depends only on input column `i`.
    pub fn expand(&mut self, x: Var, per_input: usize, values: Tensor, derivs: Tensor) -> Result<Var> {
        let tx = self.value(x);
        let want = (tx.rows(), tx.cols() * per_input);
        if values.shape() != want || derivs.shape() != want {
            return Err(TensorError::Shape {
                op: "expand",
                lhs: want,
                rhs: values.shape(),
            });
        }
        let values = check("expand", values)?;
        let rg = self.rg(&[x]);
        Ok(self.push(values, Op::Expand(x, per_input, derivs), rg))
    }

    /// `y[r,j] = Σ_i Σ_k w[j,ik]·κ(x[r,i]; c[j,ik], a[j,ik])` with
    /// `ik = i·per_input + k`. All three parameter tensors are `out × in·per_input`.
    pub fn kernel_sum(&mut self, x: Var, w: Var, c: Var, a: Var, per_input: usize, kernel: Kernel) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, inp) = tx.shape();
        let (out, width) = tw.shape();
        if width != inp * per_input {
            return Err(TensorError::Shape {
                op: "kernel_sum",
                lhs: tx.shape(),
                rhs: tw.shape(),
            });
        }
        same_shape("kernel_sum", tw, self.value(c))?;
        same_shape("kernel_sum", tw, self.value(a))?;
        let (tc, ta) = (self.value(c), self.value(a));
        let tia = ta.map(|v| 1.0 / v);
        let rg = self.rg(&[x, w, c, a]);
        let keep = rg && n * out * width <= KERNEL_CACHE_LIMIT;
        let mut cache = if keep { take_buffer(n * out * width) } else { Vec::new() };
        let mut scratch = vec![0.0; width];
        let mut y = Tensor::zeros(n, out);
        let mut xe = vec![0.0; width];
        let mut buf = vec![0.0; width];
        for r in 0..n {
            expand_row(tx.row(r), per_input, &mut xe);
            for j in 0..out {
                let e = if keep {
                    let at = (r * out + j) * width;
                    &mut cache[at..at + width]
                } else {
                    &mut scratch[..]
                };
                y.set(r, j, kernels::row_forward(kernel, &xe, tw.row(j), tc.row(j), ta.row(j), tia.row(j), e, &mut buf));
            }
        }
        let y = check("kernel_sum", y)?;
        let cache = keep.then_some(cache);
        Ok(self.push(
            y,
            Op::KernelSum {
                x,
                w,
                c,
                a,
                per_input,
                kernel,
                cache,
            },
            rg,
        ))
    }

    /// Reverse sweep from a `1 × 1` root. Returns gradients for every leaf
    /// that requires them (zero when unreachable) and clears the tape.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            let keep = matches!(node.op, Op::Leaf) && node.requires_grad;
            if !keep {
                grads[id] = None;
            } else if grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
        }
        self.recycle();
        Ok(Gradients { grads })
    }

    /// Empties the tape, returning kernel caches to the per-thread pool.
    fn recycle(&mut self) {
        for node in self.nodes.drain(..) {
            if let Op::KernelSum { cache: Some(buf), .. } = node.op {
                give_buffer(buf);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.data_mut().iter_mut().zip(g.data()).for_each(|(e, x)| *e += x),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(g, false, tb, true, &mut ga, 0.0);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(ta, true, g, false, &mut gb, 0.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulT(a, b) => {
                // y = a·bᵀ: ga = g·b, gb = gᵀ·a
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(g, false, tb, false, &mut ga, 0.0);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(g, true, ta, false, &mut gb, 0.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        gr.data_mut().iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                    }
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * s)),
            Op::MulColsConst(x, f) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    gx.row_mut(r).iter_mut().zip(f.iter()).for_each(|(o, f)| *o *= f);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.wants(*p) {
                        let gp = Tensor::from_fn(g.rows(), cols, |r, c| g.get(r, off + c));
                        self.accumulate(grads, *p, gp);
                    }
                    off += cols;
                }
            }
            Op::RowMeanSubsets(x, sets) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                for (i, set) in sets.iter().enumerate() {
                    if set.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / set.len() as f64;
                    let gi = g.row(i);
                    for &j in set {
                        gx.row_mut(j).iter_mut().zip(gi).for_each(|(o, v)| *o += v * inv);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, idx) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                for (o, &i) in idx.iter().enumerate() {
                    gx.row_mut(i).iter_mut().zip(g.row(o)).for_each(|(d, v)| *d += v);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RepeatCols(x, times) => {
                let tx = self.value(*x);
                let gx = Tensor::from_fn(tx.rows(), tx.cols(), |r, c| {
                    g.row(r)[c * times..(c + 1) * times].iter().sum()
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Unary(x, u) => {
                let tx = self.value(*x);
                let d = tx
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * u.derivative(xv, yv))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(tx.rows(), tx.cols(), d).unwrap());
            }
            Op::ReduceSum(x) => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(tx.rows(), tx.cols(), g.item()));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                if !tx.is_empty() {
                    let v = g.item() / tx.len() as f64;
                    self.accumulate(grads, *x, Tensor::full(tx.rows(), tx.cols(), v));
                }
            }
            Op::RowSum(x) => {
                let tx = self.value(*x);
                let gx = Tensor::from_fn(tx.rows(), tx.cols(), |r, _| g.get(r, 0));
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.row_mut(r)
                        .iter_mut()
                        .zip(yr.iter().zip(gr))
                        .for_each(|(o, (yv, gv))| *o = yv * (gv - dot));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy(logits, targets) => {
                let t = self.value(*logits);
                let mut gx = softmax_rows(t);
                let scale = if t.rows() == 0 { 0.0 } else { g.item() / t.rows() as f64 };
                for (r, &y) in targets.iter().enumerate() {
                    let row = gx.row_mut(r);
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::NormalizeRows(x) => {
                // y = x/‖x‖, dx = (g − y·⟨g,y⟩)/‖x‖
                let (tx, y) = (self.value(*x), &node.value);
                let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                for r in 0..tx.rows() {
                    let norm = tx.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.row_mut(r)
                        .iter_mut()
                        .zip(yr.iter().zip(gr))
                        .for_each(|(o, (yv, gv))| *o = (gv - yv * dot) / norm);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Expand(x, per_input, derivs) => {
                let tx = self.value(*x);
                let gx = Tensor::from_fn(tx.rows(), tx.cols(), |r, i| {
                    let s = i * per_input;
                    g.row(r)[s..s + per_input]
                        .iter()
                        .zip(&derivs.row(r)[s..s + per_input])
                        .map(|(a, b)| a * b)
                        .sum()
                });
                self.accumulate(grads, *x, gx);
            }
            Op::KernelSum {
                x,
                w,
                c,
                a,
                per_input,
                kernel,
                cache,
            } => {
                let (tx, tw, tc, ta) = (self.value(*x), self.value(*w), self.value(*c), self.value(*a));
                let tia = ta.map(|v| 1.0 / v);
                let (n, inp) = tx.shape();
                let (out, width) = tw.shape();
                let mut gx = Tensor::zeros(n, inp);
                let mut gw = Tensor::zeros(out, width);
                let mut gc = Tensor::zeros(out, width);
                let mut ga = Tensor::zeros(out, width);
                let mut xe = vec![0.0; width];
                let mut gxe = vec![0.0; width];
                let mut scratch = vec![0.0; width];
                for r in 0..n {
                    expand_row(tx.row(r), *per_input, &mut xe);
                    gxe.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..out {
                        let gy = g.get(r, j);
                        if gy == 0.0 {
                            continue;
                        }
                        let span = j * width..(j + 1) * width;
                        let e = match cache {
                            Some(cache) => {
                                let at = (r * out + j) * width;
                                &cache[at..at + width]
                            }
                            None => {
                                kernels::row_exponentials(*kernel, &xe, tc.row(j), ta.row(j), tia.row(j), &mut scratch);
                                &scratch[..]
                            }
                        };
                        kernels::row_backward(
                            *kernel,
                            gy,
                            &xe,
                            tw.row(j),
                            tc.row(j),
                            ta.row(j),
                            tia.row(j),
                            e,
                            &mut gxe,
                            &mut gw.data_mut()[span.clone()],
                            &mut gc.data_mut()[span.clone()],
                            &mut ga.data_mut()[span],
                        );
                    }
                    for (i, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = gxe[i * per_input..(i + 1) * per_input].iter().sum();
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *c, gc);
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

/// Repeats each entry of `row` `per_input` times into `out`.
impl Drop for Tape {
    fn drop(&mut self) {
        self.recycle();
    }
}

thread_local! {
    static BUFFERS: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A buffer of at least `len` values with unspecified contents, reusing one
/// from an earlier tape when possible.
fn take_buffer(len: usize) -> Vec<f64> {
    let mut buf = BUFFERS
        .with(|b| {
            let mut pool = b.borrow_mut();
            let fit = (0..pool.len())
                .filter(|&i| pool[i].len() >= len)
                .min_by_key(|&i| pool[i].len())
                .or_else(|| (0..pool.len()).max_by_key(|&i| pool[i].len()));
            fit.map(|i| pool.swap_remove(i))
        })
        .unwrap_or_default();
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    buf
}

fn give_buffer(buf: Vec<f64>) {
    BUFFERS.with(|b| {
        let mut pool = b.borrow_mut();
        if pool.len() < 16 {
            pool.push(buf);
        }
    });
}

/// Largest number of cached exponentials per `kernel_sum` (256 MiB).
const KERNEL_CACHE_LIMIT: usize = 1 << 25;

fn expand_row(row: &[f64], per_input: usize, out: &mut [f64]) {
    for (i, &v) in row.iter().enumerate() {
        out[i * per_input..(i + 1) * per_input].iter_mut().for_each(|o| *o = v);
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` w.r.t. every entry of `inputs[which]`.
    fn fd_grad(inputs: &[Tensor], which: usize, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> Tensor {
        let h = 1e-5;
        let eval = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&mut tape, &vars);
            tape.value(out).item()
        };
        let base = &inputs[which];
        let mut g = Tensor::zeros(base.rows(), base.cols());
        for e in 0..base.len() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[e] -= h;
            g.data_mut()[e] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        g
    }

    fn analytic(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> Vec<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect()
    }

    fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-5))
            .fold(0.0, f64::max)
    }

    fn check_op(inputs: Vec<Tensor>, tol: f64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) {
        let an = analytic(&inputs, f);
        for (i, a) in an.iter().enumerate() {
            let n = fd_grad(&inputs, i, f);
            let err = max_rel_err(a, &n);
            assert!(err < tol, "input {i}: rel err {err}\nanalytic {a:?}\nnumeric {n:?}");
        }
    }

    /// Random weights make every reduction to a scalar non-trivial.
    fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
        let (r, c) = tape.value(y).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(Tensor::random_normal(r, c, 1.0, &mut rng));
        let p = tape.mul(y, w).unwrap();
        tape.reduce_sum(p).unwrap()
    }

    #[test]
    fn silu_at_zero() {
        assert_eq!(Unary::Silu.apply(0.0), 0.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.reduce_sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::full(2, 3, 1.0));
        assert!(tape.is_empty());
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let xv = Tensor::from_vec(1, 4, vec![1.5, -2.0, 0.25, 7.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(xv.clone());
        let sq = tape.square(x).unwrap();
        let s = tape.reduce_sum(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv);
    }

    #[test]
    fn concat_shape() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(3, 2));
        let b = tape.constant(Tensor::zeros(3, 5));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), (3, 7));
        let bad = tape.constant(Tensor::zeros(2, 1));
        assert!(tape.concat_cols(&[a, bad]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let mut tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(TensorError::EmptyTape)));
        let x = tape.param(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarRoot((2, 2)))));
    }

    #[test]
    fn non_finite_trips_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1000.0));
        assert!(matches!(tape.exp(x), Err(TensorError::NonFinite { op: "exp" })));
    }

    #[test]
    fn empty_subset_mean_is_zero_row() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(3, 2, 4.0));
        let m = tape.row_mean_subset(x, &[]).unwrap();
        assert_eq!(tape.value(m), &Tensor::zeros(1, 2));
        let m2 = tape.row_mean_subset(x, &[0, 2]).unwrap();
        assert_eq!(tape.value(m2), &Tensor::full(1, 2, 4.0));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::random_normal(4, 3, 1.0, &mut rng);
        let b = Tensor::random_normal(3, 2, 1.0, &mut rng);
        check_op(vec![a, b], 1e-6, &|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, 9)
        });
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f(x) = sum(x∘x + x) computed with x reused three times.
        let xv = Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(xv.clone());
        let xx = tape.mul(x, x).unwrap();
        let y = tape.add(xx, x).unwrap();
        let s = tape.reduce_sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        let expect = xv.map(|v| 2.0 * v + 1.0);
        assert!(g.get(x).unwrap().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(2, 2, 1.0));
        let unused = tape.param(Tensor::full(1, 3, 1.0));
        let s = tape.reduce_sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(1, 3));
    }

    #[test]
    fn kernel_sum_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::random_uniform(3, 2, -1.0, 1.0, &mut rng);
        let w = Tensor::random_normal(2, 6, 1.0, &mut rng);
        let c = Tensor::random_uniform(2, 6, -1.0, 1.0, &mut rng);
        let a = Tensor::random_uniform(2, 6, 0.5, 2.0, &mut rng);
        for kernel in [Kernel::Laplace, Kernel::Ricker] {
            let mut tape = Tape::new();
            let vs: Vec<Var> = [&x, &w, &c, &a].iter().map(|t| tape.constant((*t).clone())).collect();
            let y = tape.kernel_sum(vs[0], vs[1], vs[2], vs[3], 3, kernel).unwrap();
            for r in 0..3 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for i in 0..2 {
                        for k in 0..3 {
                            let q = i * 3 + k;
                            let d = x.get(r, i) - c.get(j, q);
                            let term = match kernel {
                                Kernel::Laplace => (-a.get(j, q) * d.abs()).exp(),
                                Kernel::Ricker => {
                                    let u = d / a.get(j, q);
                                    (1.0 - u * u) * (-u * u / 2.0).exp()
                                }
                            };
                            s += w.get(j, q) * term;
                        }
                    }
                    assert!((tape.value(y).get(r, j) - s).abs() < 1e-13);
                }
            }
        }
    }

    /// Every differentiable op against central differences over many seeds.
    #[test]
    fn op_gradients_match_finite_differences() {
        type Build = fn(&mut Tape, &[Var]) -> Var;
        let unary: Vec<(&str, Build)> = vec![
            ("tanh", |t, v| t.tanh(v[0]).unwrap()),
            ("silu", |t, v| t.silu(v[0]).unwrap()),
            ("sin", |t, v| t.sin(v[0]).unwrap()),
            ("cos", |t, v| t.cos(v[0]).unwrap()),
            ("exp", |t, v| t.exp(v[0]).unwrap()),
            ("abs", |t, v| t.abs(v[0]).unwrap()),
            ("square", |t, v| t.square(v[0]).unwrap()),
            ("relu", |t, v| t.relu(v[0]).unwrap()),
            ("softplus", |t, v| t.softplus(v[0]).unwrap()),
            ("softmax", |t, v| t.softmax_rows(v[0]).unwrap()),
            ("normalize", |t, v| t.normalize_rows(v[0]).unwrap()),
            ("row_sum", |t, v| t.row_sum(v[0]).unwrap()),
            ("scale", |t, v| t.scale(v[0], -1.7).unwrap()),
            ("repeat", |t, v| t.repeat_cols(v[0], 3).unwrap()),
            ("mul_cols", |t, v| t.mul_cols_const(v[0], Arc::new(vec![1.0, 2.0, -3.0])).unwrap()),
            ("mean_subsets", |t, v| {
                t.row_mean_subsets(v[0], Arc::new(vec![vec![0, 1], vec![], vec![3], vec![1, 2, 3]]))
                    .unwrap()
            }),
            ("gather", |t, v| t.gather_rows(v[0], Arc::new(vec![3, 0, 3, 1])).unwrap()),
        ];
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::random_normal(4, 3, 1.0, &mut rng);
            for (name, build) in &unary {
                let an = analytic(std::slice::from_ref(&x), &|t, v| {
                    let y = build(t, v);
                    weighted_sum(t, y, seed + 1000)
                });
                let num = fd_grad(std::slice::from_ref(&x), 0, &|t, v| {
                    let y = build(t, v);
                    weighted_sum(t, y, seed + 1000)
                });
                let err = max_rel_err(&an[0], &num);
                assert!(err < 1e-4, "{name} seed {seed}: {err}");
            }
            let y = Tensor::random_normal(4, 3, 1.0, &mut rng);
            let row = Tensor::random_normal(1, 3, 1.0, &mut rng);
            let w = Tensor::random_normal(2, 3, 1.0, &mut rng);
            check_op(vec![x.clone(), y.clone()], 1e-4, &|t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let s = t.sub(a, v[1]).unwrap();
                let m = t.mul(s, v[1]).unwrap();
                let c = t.concat_cols(&[m, v[0]]).unwrap();
                weighted_sum(t, c, seed)
            });
            check_op(vec![x.clone(), row], 1e-4, &|t, v| {
                let y = t.add_row(v[0], v[1]).unwrap();
                let y = t.tanh(y).unwrap();
                weighted_sum(t, y, seed)
            });
            check_op(vec![x.clone(), w], 1e-4, &|t, v| {
                let y = t.matmul_t(v[0], v[1]).unwrap();
                let m = t.square(y).unwrap();
                t.mean(m).unwrap()
            });
            let targets = Arc::new(vec![0usize, 2, 1, 2]);
            check_op(vec![x.clone()], 1e-4, &|t, v| t.cross_entropy(v[0], targets.clone()).unwrap());
            let xk = Tensor::random_uniform(3, 2, -1.0, 1.0, &mut rng);
            let wk = Tensor::random_normal(2, 4, 1.0, &mut rng);
            let ck = Tensor::random_uniform(2, 4, -1.0, 1.0, &mut rng);
            let ak = Tensor::random_uniform(2, 4, 0.5, 2.0, &mut rng);
            for kernel in [Kernel::Laplace, Kernel::Ricker] {
                check_op(vec![xk.clone(), wk.clone(), ck.clone(), ak.clone()], 1e-4, &|t, v| {
                    let y = t.kernel_sum(v[0], v[1], v[2], v[3], 2, kernel).unwrap();
                    weighted_sum(t, y, seed)
                });
            }
        }
    }
}
