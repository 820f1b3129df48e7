//! Reverse-mode differentiation tape.
//!
//! Every operation records its inputs and enough metadata to replay the
//! chain rule backwards. Forward values are checked for non-finite
//! entries as they are produced, and gradients are checked again during
//! the reverse sweep, so a NaN is always reported with the op that made
//! it rather than surfacing as a silently poisoned loss.

use crate::error::{Result, TensorError};
use crate::optim::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op<F> {
    Const,
    Param(ParamId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, F),
    MatMul(TensorId, TensorId),
    MatMulNT(TensorId, TensorId),
    AddRowVec(TensorId, TensorId),
    MulRowVec(TensorId, TensorId),
    GatherRows(TensorId, Vec<usize>),
    ScatterAddRows(TensorId, Vec<usize>),
    MaskRows(TensorId, TensorId, Vec<usize>),
    ConcatRows(TensorId, TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    SumLastAxis(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    Sigmoid(TensorId),
    Relu(TensorId),
    LeakyRelu(TensorId, F),
    PowConst(TensorId, F),
    SoftmaxLastAxis(TensorId),
    LogSumExpLastAxis(TensorId),
    DiagPart(TensorId),
    RowNormalize(TensorId),
    CosineRowwise(TensorId, TensorId),
    ExpandHeads(TensorId, usize),
    Reshape(TensorId),
    Norm2(TensorId),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::AddRowVec(..) => "add_row_vec",
            Op::MulRowVec(..) => "mul_row_vec",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::MaskRows(..) => "mask_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SumAll(_) => "sum_all",
            Op::MeanAll(_) => "mean_all",
            Op::SumLastAxis(_) => "sum_last_axis",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Sqrt(_) => "sqrt",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::PowConst(..) => "pow_const",
            Op::SoftmaxLastAxis(_) => "softmax_last_axis",
            Op::LogSumExpLastAxis(_) => "logsumexp_last_axis",
            Op::DiagPart(_) => "diag_part",
            Op::RowNormalize(_) => "row_normalize",
            Op::CosineRowwise(..) => "cosine_rowwise",
            Op::ExpandHeads(..) => "expand_heads",
            Op::Reshape(_) => "reshape",
            Op::Norm2(_) => "norm2",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    op: Op<F>,
}

/// Recording of a forward computation, replayable in reverse.
///
/// A tape is confined to a single worker and is meant to live for one
/// optimizer step: bind parameters, build the loss, call [`Tape::backward`],
/// then fold the leaf gradients back into the [`ParamStore`].
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
    accumulate_on_repeat: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
            accumulate_on_repeat: false,
        }
    }

    /// Allow a second `backward` call to accumulate into existing
    /// gradients instead of erroring (default: error).
    pub fn set_accumulate_on_repeat(&mut self, allow: bool) {
        self.accumulate_on_repeat = allow;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Tensor<F>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Result<TensorId> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite {
                op: op.name(),
                phase: "forward",
            });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    // ---- leaves ------------------------------------------------------

    pub fn constant(&mut self, value: Tensor<F>) -> Result<TensorId> {
        self.push(Op::Const, value)
    }

    pub fn scalar(&mut self, v: F) -> Result<TensorId> {
        self.push(Op::Const, Tensor::scalar(v))
    }

    /// Bind a stored parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Result<TensorId> {
        self.push(Op::Param(id), store.value(id).clone())
    }

    // ---- elementwise binary ------------------------------------------

    fn zip(
        &mut self,
        op: Op<F>,
        a: TensorId,
        b: TensorId,
        f: impl Fn(F, F) -> F,
    ) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape(op.name(), ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        self.push(op, value)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip(Op::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, a: TensorId, k: F) -> Result<TensorId> {
        let value = self.nodes[a.0].value.map(|x| x * k);
        self.push(Op::Scale(a, k), value)
    }

    // ---- matrix products ---------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::shape("matmul", ta.shape(), tb.shape()));
        }
        let value = matmul_plain(ta, tb);
        self.push(Op::MatMul(a, b), value)
    }

    /// `a · bᵀ` for `a: [m,d]`, `b: [n,d]`.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(TensorError::shape("matmul_nt", ta.shape(), tb.shape()));
        }
        let (m, d) = (ta.shape()[0], ta.shape()[1]);
        let n = tb.shape()[0];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = F::zero();
                for t in 0..d {
                    acc += ta.data()[i * d + t] * tb.data()[j * d + t];
                }
                out.data_mut()[i * n + j] = acc;
            }
        }
        self.push(Op::MatMulNT(a, b), out)
    }

    // ---- row-vector broadcasts ---------------------------------------

    pub fn add_row_vec(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let (tx, tv) = (&self.nodes[x.0].value, &self.nodes[v.0].value);
        if tx.rank() != 2 || tv.rank() != 1 || tx.shape()[1] != tv.shape()[0] {
            return Err(TensorError::shape("add_row_vec", tx.shape(), tv.shape()));
        }
        let c = tx.shape()[1];
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + tv.data()[i % c])
            .collect();
        let value = Tensor::new(tx.shape(), data)?;
        self.push(Op::AddRowVec(x, v), value)
    }

    pub fn mul_row_vec(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let (tx, tv) = (&self.nodes[x.0].value, &self.nodes[v.0].value);
        if tx.rank() != 2 || tv.rank() != 1 || tx.shape()[1] != tv.shape()[0] {
            return Err(TensorError::shape("mul_row_vec", tx.shape(), tv.shape()));
        }
        let c = tx.shape()[1];
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a * tv.data()[i % c])
            .collect();
        let value = Tensor::new(tx.shape(), data)?;
        self.push(Op::MulRowVec(x, v), value)
    }

    // ---- row indexing -------------------------------------------------

    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let n = tx.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid(
                "gather_rows",
                format!("row index {bad} out of bounds for {n} rows"),
            ));
        }
        let w = tx.row_len();
        let mut shape = tx.shape().to_vec();
        shape[0] = idx.len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(tx.row(i));
        }
        let value = Tensor::new(&shape, data)?;
        self.push(Op::GatherRows(x, idx.to_vec()), value)
    }

    /// Scatter row `k` of `x` into output row `idx[k]`, summing collisions.
    pub fn scatter_add_rows(
        &mut self,
        x: TensorId,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        if idx.len() != tx.rows() {
            return Err(TensorError::invalid(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), tx.rows()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(TensorError::invalid(
                "scatter_add_rows",
                format!("target row {bad} out of bounds for {out_rows} rows"),
            ));
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = out_rows;
        let mut out = Tensor::zeros(&shape);
        for (k, &i) in idx.iter().enumerate() {
            let src = tx.row(k).to_vec();
            for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                *o += s;
            }
        }
        self.push(Op::ScatterAddRows(x, idx.to_vec()), out)
    }

    /// Replace the listed rows of `base` with `token` (broadcast).
    pub fn mask_rows(
        &mut self,
        base: TensorId,
        token: TensorId,
        rows: &[usize],
    ) -> Result<TensorId> {
        let (tb, tt) = (&self.nodes[base.0].value, &self.nodes[token.0].value);
        if tb.rank() != 2 || tt.rank() != 1 || tb.shape()[1] != tt.shape()[0] {
            return Err(TensorError::shape("mask_rows", tb.shape(), tt.shape()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= tb.rows()) {
            return Err(TensorError::invalid(
                "mask_rows",
                format!("row index {bad} out of bounds for {} rows", tb.rows()),
            ));
        }
        let mut out = tb.clone();
        let tok = tt.data().to_vec();
        for &i in rows {
            out.row_mut(i).copy_from_slice(&tok);
        }
        self.push(Op::MaskRows(base, token, rows.to_vec()), out)
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape()[1..] != tb.shape()[1..] {
            return Err(TensorError::shape("concat_rows", ta.shape(), tb.shape()));
        }
        let mut shape = ta.shape().to_vec();
        shape[0] += tb.shape()[0];
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::new(&shape, data)?;
        self.push(Op::ConcatRows(a, b), value)
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let s: F = self.nodes[x.0].value.data().iter().copied().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.is_empty() {
            return Err(TensorError::invalid("mean_all", "mean of empty tensor"));
        }
        let s: F = t.data().iter().copied().sum();
        let v = s / F::c(t.len() as f64);
        self.push(Op::MeanAll(x), Tensor::scalar(v))
    }

    /// Sum over the trailing axis: `[.., c] -> [..]`.
    pub fn sum_last_axis(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.rank() < 2 {
            return Err(TensorError::invalid("sum_last_axis", "rank must be >= 2"));
        }
        let c = *t.shape().last().unwrap();
        let outer: usize = t.shape()[..t.rank() - 1].iter().product();
        let mut data = Vec::with_capacity(outer);
        for i in 0..outer {
            data.push(t.data()[i * c..(i + 1) * c].iter().copied().sum());
        }
        let shape = t.shape()[..t.rank() - 1].to_vec();
        let value = Tensor::new(&shape, data)?;
        self.push(Op::SumLastAxis(x), value)
    }

    pub fn norm2(&mut self, x: TensorId) -> Result<TensorId> {
        let s: F = self.nodes[x.0].value.data().iter().map(|&v| v * v).sum();
        self.push(Op::Norm2(x), Tensor::scalar(s.sqrt()))
    }

    // ---- elementwise unary ---------------------------------------------

    fn unary(&mut self, op: Op<F>, x: TensorId, f: impl Fn(F) -> F) -> Result<TensorId> {
        let value = self.nodes[x.0].value.map(f);
        self.push(op, value)
    }

    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(Op::Exp(x), x, |v| v.exp())
    }

    pub fn ln(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(Op::Ln(x), x, |v| v.ln())
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(Op::Sqrt(x), x, |v| v.sqrt())
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(Op::Sigmoid(x), x, sigmoid_stable)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(
            Op::Relu(x),
            x,
            |v| if v > F::zero() { v } else { F::zero() },
        )
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: F) -> Result<TensorId> {
        self.unary(Op::LeakyRelu(x, slope), x, |v| {
            if v > F::zero() {
                v
            } else {
                v * slope
            }
        })
    }

    /// Elementwise `x^gamma` for a fixed exponent.
    pub fn pow_const(&mut self, x: TensorId, gamma: F) -> Result<TensorId> {
        self.unary(Op::PowConst(x, gamma), x, |v| v.powf(gamma))
    }

    // ---- row-structured nonlinearities -----------------------------------

    pub fn softmax_last_axis(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 {
            return Err(TensorError::invalid("softmax_last_axis", "rank must be 2"));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let row = t.row(i);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for j in 0..c {
                denom += (row[j] - m).exp();
            }
            let src: Vec<F> = row.iter().map(|&v| (v - m).exp() / denom).collect();
            out.row_mut(i).copy_from_slice(&src);
        }
        self.push(Op::SoftmaxLastAxis(x), out)
    }

    pub fn logsumexp_last_axis(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 {
            return Err(TensorError::invalid(
                "logsumexp_last_axis",
                "rank must be 2",
            ));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let row = t.row(i);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut acc = F::zero();
            for j in 0..c {
                acc += (row[j] - m).exp();
            }
            data.push(m + acc.ln());
        }
        let value = Tensor::new(&[n], data)?;
        self.push(Op::LogSumExpLastAxis(x), value)
    }

    pub fn diag_part(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 || t.shape()[0] != t.shape()[1] {
            return Err(TensorError::invalid("diag_part", "square matrix required"));
        }
        let n = t.shape()[0];
        let data = (0..n).map(|i| t.get2(i, i)).collect();
        let value = Tensor::new(&[n], data)?;
        self.push(Op::DiagPart(x), value)
    }

    /// L2-normalize each row; all-zero rows stay zero.
    pub fn row_normalize(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 {
            return Err(TensorError::invalid("row_normalize", "rank must be 2"));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let row = t.row(i);
            let norm = l2(row);
            if norm > degenerate_norm::<F>() {
                let src: Vec<F> = row.iter().map(|&v| v / norm).collect();
                out.row_mut(i).copy_from_slice(&src);
            }
        }
        self.push(Op::RowNormalize(x), out)
    }

    /// Cosine similarity of matching rows; rows with (near-)zero norm
    /// on either side yield similarity 0.
    pub fn cosine_rowwise(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || ta.shape() != tb.shape() {
            return Err(TensorError::shape("cosine_rowwise", ta.shape(), tb.shape()));
        }
        let n = ta.shape()[0];
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            data.push(cosine(ta.row(i), tb.row(i)));
        }
        let value = Tensor::new(&[n], data)?;
        self.push(Op::CosineRowwise(a, b), value)
    }

    /// Repeat each column of `[m, h]` into a block of `block` columns,
    /// producing `[m, h * block]`. Broadcasts per-head scalars over the
    /// head's channel slice.
    pub fn expand_heads(&mut self, x: TensorId, block: usize) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 || block == 0 {
            return Err(TensorError::invalid(
                "expand_heads",
                "rank-2 input and block >= 1",
            ));
        }
        let (m, h) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(m * h * block);
        for i in 0..m {
            for j in 0..h {
                let v = t.get2(i, j);
                data.extend(std::iter::repeat(v).take(block));
            }
        }
        let value = Tensor::new(&[m, h * block], data)?;
        self.push(Op::ExpandHeads(x, block), value)
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let value = self.nodes[x.0].value.reshaped(shape)?;
        self.push(Op::Reshape(x), value)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates gradient slots for
    /// every node the loss depends on.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done && !self.accumulate_on_repeat {
            return Err(TensorError::RepeatedBackward);
        }
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        if !lt.item().is_finite() {
            return Err(TensorError::NonFinite {
                op: self.nodes[loss.0].op.name(),
                phase: "forward",
            });
        }

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; n];
        acc_into(&mut grads[loss.0], &Tensor::scalar(F::one()), &[1]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.all_finite() {
                return Err(TensorError::NonFinite {
                    op: self.nodes[i].op.name(),
                    phase: "backward",
                });
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match (&mut node.grad, g) {
                (Some(old), Some(new)) => {
                    for (o, &d) in old.data_mut().iter_mut().zip(new.data()) {
                        *o += d;
                    }
                }
                (slot @ None, Some(new)) => *slot = Some(new),
                _ => {}
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Clear all gradient slots so backward may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Fold leaf gradients back into their parameters' grad accumulators.
    pub fn apply_param_grads(&self, store: &mut ParamStore<F>) {
        for node in &self.nodes {
            if let (Op::Param(pid), Some(g)) = (&node.op, &node.grad) {
                store.accumulate_grad(*pid, g);
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let val = |id: TensorId| -> &Tensor<F> { &self.nodes[id.0].value };
        match &self.nodes[i].op {
            Op::Const | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc_into(&mut grads[a.0], g, val(*a).shape());
                acc_into(&mut grads[b.0], g, val(*b).shape());
            }
            Op::Sub(a, b) => {
                acc_into(&mut grads[a.0], g, val(*a).shape());
                let neg = g.map(|v| -v);
                acc_into(&mut grads[b.0], &neg, val(*b).shape());
            }
            Op::Mul(a, b) => {
                let da = zip_map(g, val(*b), |x, y| x * y);
                let db = zip_map(g, val(*a), |x, y| x * y);
                acc_into(&mut grads[a.0], &da, val(*a).shape());
                acc_into(&mut grads[b.0], &db, val(*b).shape());
            }
            Op::Div(a, b) => {
                let tb = val(*b);
                let da = zip_map(g, tb, |x, y| x / y);
                let ta = val(*a);
                let mut db = Tensor::zeros(tb.shape());
                for k in 0..db.len() {
                    let bk = tb.data()[k];
                    db.data_mut()[k] = -g.data()[k] * ta.data()[k] / (bk * bk);
                }
                acc_into(&mut grads[a.0], &da, ta.shape());
                acc_into(&mut grads[b.0], &db, tb.shape());
            }
            Op::Scale(a, k) => {
                let da = g.map(|v| v * *k);
                acc_into(&mut grads[a.0], &da, val(*a).shape());
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = matmul_nt_plain(g, tb); // g [m,n] · bᵀ [n,k] -> [m,k]
                let db = matmul_tn_plain(ta, g); // aᵀ [k,m] · g [m,n] -> [k,n]
                acc_into(&mut grads[a.0], &da, ta.shape());
                acc_into(&mut grads[b.0], &db, tb.shape());
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = matmul_plain(g, tb); // g [m,n] · b [n,d]
                let db = matmul_tn_plain(g, ta); // gᵀ [n,m] · a [m,d]
                acc_into(&mut grads[a.0], &da, ta.shape());
                acc_into(&mut grads[b.0], &db, tb.shape());
            }
            Op::AddRowVec(x, v) => {
                let tv = val(*v);
                acc_into(&mut grads[x.0], g, val(*x).shape());
                let c = tv.shape()[0];
                let mut dv = Tensor::zeros(&[c]);
                for (k, &gv) in g.data().iter().enumerate() {
                    dv.data_mut()[k % c] += gv;
                }
                acc_into(&mut grads[v.0], &dv, tv.shape());
            }
            Op::MulRowVec(x, v) => {
                let (tx, tv) = (val(*x), val(*v));
                let c = tv.shape()[0];
                let mut dx = Tensor::zeros(tx.shape());
                let mut dv = Tensor::zeros(&[c]);
                for k in 0..g.len() {
                    let j = k % c;
                    dx.data_mut()[k] = g.data()[k] * tv.data()[j];
                    dv.data_mut()[j] += g.data()[k] * tx.data()[k];
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
                acc_into(&mut grads[v.0], &dv, tv.shape());
            }
            Op::GatherRows(x, idx) => {
                let tx = val(*x);
                let mut dx = Tensor::zeros(tx.shape());
                for (k, &i2) in idx.iter().enumerate() {
                    let src = g.row(k).to_vec();
                    for (o, s) in dx.row_mut(i2).iter_mut().zip(src) {
                        *o += s;
                    }
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::ScatterAddRows(x, idx) => {
                let tx = val(*x);
                let mut dx = Tensor::zeros(tx.shape());
                for (k, &i2) in idx.iter().enumerate() {
                    let src = g.row(i2).to_vec();
                    dx.row_mut(k).copy_from_slice(&src);
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::MaskRows(base, token, rows) => {
                let tb = val(*base);
                let tt = val(*token);
                let mut masked = vec![false; tb.rows()];
                for &r in rows {
                    masked[r] = true;
                }
                let mut dbase = g.clone();
                let mut dtok = Tensor::zeros(tt.shape());
                for (r, &is_masked) in masked.iter().enumerate() {
                    if is_masked {
                        let src = g.row(r).to_vec();
                        for (o, s) in dtok.data_mut().iter_mut().zip(src) {
                            *o += s;
                        }
                        for v in dbase.row_mut(r) {
                            *v = F::zero();
                        }
                    }
                }
                acc_into(&mut grads[base.0], &dbase, tb.shape());
                acc_into(&mut grads[token.0], &dtok, tt.shape());
            }
            Op::ConcatRows(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let na = ta.rows();
                let w = ta.row_len();
                let da = Tensor::new(ta.shape(), g.data()[..na * w].to_vec()).unwrap();
                let db = Tensor::new(tb.shape(), g.data()[na * w..].to_vec()).unwrap();
                acc_into(&mut grads[a.0], &da, ta.shape());
                acc_into(&mut grads[b.0], &db, tb.shape());
            }
            Op::SumAll(x) => {
                let tx = val(*x);
                let dx = Tensor::full(tx.shape(), g.item());
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::MeanAll(x) => {
                let tx = val(*x);
                let dx = Tensor::full(tx.shape(), g.item() / F::c(tx.len() as f64));
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::SumLastAxis(x) => {
                let tx = val(*x);
                let c = *tx.shape().last().unwrap();
                let mut dx = Tensor::zeros(tx.shape());
                for (i, &gv) in g.data().iter().enumerate() {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = gv;
                    }
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::Norm2(x) => {
                let tx = val(*x);
                let y = self.nodes[i].value.item();
                let mut dx = Tensor::zeros(tx.shape());
                if y > F::zero() {
                    let gv = g.item();
                    for (o, &v) in dx.data_mut().iter_mut().zip(tx.data()) {
                        *o = gv * v / y;
                    }
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::Exp(x) => {
                let y = &self.nodes[i].value;
                let dx = zip_map(g, y, |gv, yv| gv * yv);
                acc_into(&mut grads[x.0], &dx, val(*x).shape());
            }
            Op::Ln(x) => {
                let tx = val(*x);
                let dx = zip_map(g, tx, |gv, xv| gv / xv);
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::Sqrt(x) => {
                let y = &self.nodes[i].value;
                let half = F::c(0.5);
                let dx = zip_map(g, y, |gv, yv| gv * half / yv);
                acc_into(&mut grads[x.0], &dx, val(*x).shape());
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                let dx = zip_map(g, y, |gv, yv| gv * yv * (F::one() - yv));
                acc_into(&mut grads[x.0], &dx, val(*x).shape());
            }
            Op::Relu(x) => {
                let tx = val(*x);
                let dx = zip_map(g, tx, |gv, xv| if xv > F::zero() { gv } else { F::zero() });
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::LeakyRelu(x, slope) => {
                let tx = val(*x);
                let s = *slope;
                let dx = zip_map(g, tx, |gv, xv| if xv > F::zero() { gv } else { gv * s });
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::PowConst(x, gamma) => {
                let tx = val(*x);
                let gm = *gamma;
                let dx = zip_map(g, tx, |gv, xv| gv * gm * xv.powf(gm - F::one()));
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::SoftmaxLastAxis(x) => {
                let y = &self.nodes[i].value;
                let (n, c) = (y.shape()[0], y.shape()[1]);
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..n {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: F = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..c {
                        dx.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc_into(&mut grads[x.0], &dx, val(*x).shape());
            }
            Op::LogSumExpLastAxis(x) => {
                let tx = val(*x);
                let (n, c) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..n {
                    let row = tx.row(r);
                    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
                    let denom: F = row.iter().map(|&v| (v - m).exp()).sum();
                    for j in 0..c {
                        dx.data_mut()[r * c + j] = g.data()[r] * (row[j] - m).exp() / denom;
                    }
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::DiagPart(x) => {
                let tx = val(*x);
                let n = tx.shape()[0];
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..n {
                    dx.data_mut()[r * n + r] = g.data()[r];
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::RowNormalize(x) => {
                let tx = val(*x);
                let y = &self.nodes[i].value;
                let (n, c) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..n {
                    let norm = l2(tx.row(r));
                    if norm <= degenerate_norm::<F>() {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: F = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..c {
                        dx.data_mut()[r * c + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::CosineRowwise(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, c) = (ta.shape()[0], ta.shape()[1]);
                let mut da = Tensor::zeros(ta.shape());
                let mut db = Tensor::zeros(tb.shape());
                for r in 0..n {
                    let (ar, br) = (ta.row(r), tb.row(r));
                    let (na, nb) = (l2(ar), l2(br));
                    if na <= degenerate_norm::<F>() || nb <= degenerate_norm::<F>() {
                        continue;
                    }
                    let cos = dot(ar, br) / (na * nb);
                    let gv = g.data()[r];
                    for j in 0..c {
                        da.data_mut()[r * c + j] =
                            gv * (br[j] / (na * nb) - cos * ar[j] / (na * na));
                        db.data_mut()[r * c + j] =
                            gv * (ar[j] / (na * nb) - cos * br[j] / (nb * nb));
                    }
                }
                acc_into(&mut grads[a.0], &da, ta.shape());
                acc_into(&mut grads[b.0], &db, tb.shape());
            }
            Op::ExpandHeads(x, block) => {
                let tx = val(*x);
                let (m, h) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..m {
                    for k in 0..h {
                        let mut acc = F::zero();
                        for t in 0..*block {
                            acc += g.data()[r * h * block + k * block + t];
                        }
                        dx.data_mut()[r * h + k] = acc;
                    }
                }
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
            Op::Reshape(x) => {
                let tx = val(*x);
                let dx = Tensor::new(tx.shape(), g.data().to_vec()).unwrap();
                acc_into(&mut grads[x.0], &dx, tx.shape());
            }
        }
    }
}

// ---- plain (untaped) kernels shared by forward and backward ------------

fn matmul_plain<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for t in 0..k {
            let av = a.data()[i * k + t];
            if av == F::zero() {
                continue;
            }
            for j in 0..n {
                out.data_mut()[i * n + j] += av * b.data()[t * n + j];
            }
        }
    }
    out
}

/// `a · bᵀ` on plain tensors.
fn matmul_nt_plain<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = F::zero();
            for t in 0..k {
                acc += a.data()[i * k + t] * b.data()[j * k + t];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    out
}

/// `aᵀ · b` on plain tensors.
fn matmul_tn_plain<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[k, n]);
    for t in 0..m {
        for i in 0..k {
            let av = a.data()[t * k + i];
            if av == F::zero() {
                continue;
            }
            for j in 0..n {
                out.data_mut()[i * n + j] += av * b.data()[t * n + j];
            }
        }
    }
    out
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    debug_assert_eq!(a.len(), b.len());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).unwrap()
}

fn acc_into<F: Scalar>(slot: &mut Option<Tensor<F>>, delta: &Tensor<F>, shape: &[usize]) {
    match slot {
        Some(g) => {
            for (o, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                *o += d;
            }
        }
        None => {
            debug_assert_eq!(delta.shape(), shape);
            *slot = Some(delta.clone());
        }
    }
}

fn sigmoid_stable<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn cosine<F: Scalar>(a: &[F], b: &[F]) -> F {
    let (na, nb) = (l2(a), l2(b));
    if na <= degenerate_norm::<F>() || nb <= degenerate_norm::<F>() {
        F::zero()
    } else {
        dot(a, b) / (na * nb)
    }
}

fn l2<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Norm threshold below which a row counts as the zero vector.
fn degenerate_norm<F: Scalar>() -> F {
    F::min_positive_value().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_closed_form() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1], &[0.0])).unwrap();
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert!((tape.grad(x).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cosine_of_identical_vectors_is_one() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(t64(&[1, 3], &[1.0, -2.0, 0.5])).unwrap();
        let c = tape.cosine_rowwise(v, v).unwrap();
        assert!((tape.value(c).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_vector_defined_as_zero() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t64(&[1, 2], &[0.0, 0.0])).unwrap();
        let b = tape.constant(t64(&[1, 2], &[1.0, 2.0])).unwrap();
        let c = tape.cosine_rowwise(a, b).unwrap();
        assert_eq!(tape.value(c).item(), 0.0);
    }

    #[test]
    fn pow_gradient_closed_form() {
        // d/dx x^2 at 0.5 is 1.0
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1], &[0.5])).unwrap();
        let y = tape.pow_const(x, 2.0).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert!((tape.grad(x).unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let s = tape.sum_all(w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t64(&[2, 2], &[1.0; 4])).unwrap();
        let b = tape.constant(t64(&[1, 2], &[1.0; 2])).unwrap();
        match tape.add(a, b) {
            Err(TensorError::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 2]);
                assert_eq!(rhs, vec![1, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_forward_is_reported_with_op_name() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1], &[0.0])).unwrap();
        match tape.ln(x) {
            Err(TensorError::NonFinite { op, phase }) => {
                assert_eq!(op, "ln");
                assert_eq!(phase, "forward");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_backward_errors_by_default() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1], &[2.0])).unwrap();
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(
            tape.backward(s),
            Err(TensorError::RepeatedBackward)
        ));
        tape.reset_grads();
        tape.backward(s).unwrap();
    }

    #[test]
    fn repeated_backward_accumulates_when_enabled() {
        let mut tape = Tape::<f64>::new();
        tape.set_accumulate_on_repeat(true);
        let x = tape.constant(t64(&[1], &[3.0])).unwrap();
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert!((tape.grad(x).unwrap().item() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn gather_scatter_round_trip_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .constant(t64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
            .unwrap();
        let gathered = tape.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(gathered).row(0), &[5.0, 6.0]);
        let scattered = tape.scatter_add_rows(gathered, &[0, 0, 1], 2).unwrap();
        assert_eq!(tape.value(scattered).row(0), &[6.0, 8.0]);
        assert_eq!(tape.value(scattered).row(1), &[5.0, 6.0]);
    }

    #[test]
    fn expand_heads_broadcasts_blocks() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 2], &[3.0, 7.0])).unwrap();
        let y = tape.expand_heads(x, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0, 3.0, 7.0, 7.0, 7.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .constant(t64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]))
            .unwrap();
        let y = tape.softmax_last_axis(x).unwrap();
        for r in 0..2 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
