use super::matrix::Tensor;
use super::{Result, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a user-supplied operation: receives the input values,
/// the output value and the output gradient, returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Tensor,
    },
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation. Insertion order is a topological
/// order, so the backward sweep is a single reverse pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `x · wᵀ`, the row-wise application of a weight matrix stored as
    /// `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return Err(TensorError::Shape {
                op: "linear",
                left: xv.shape(),
                right: wv.shape(),
            });
        }
        let value = xv.matmul(&wv.transpose())?;
        Ok(self.push(value, Op::Linear(x, w)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(value, Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), "hadamard", |x, y| x * y)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    /// Adds a `1 x c` row vector to every row of an `n x c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(TensorError::Shape {
                op: "add_row",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let value = self.value(x).map(|v| v + offset);
        self.push(value, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| -softplus(-v));
        self.push(value, Op::LogSigmoid(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape(),
                    right: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Output row `k` is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= xv.rows() {
                return Err(TensorError::Index {
                    index: i,
                    rows: xv.rows(),
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::from_vec(index.len(), cols, data)?;
        Ok(self.push(value, Op::GatherRows(x, index.to_vec())))
    }

    /// Output row `s` is the sum of the rows of `x` whose segment id is `s`.
    pub fn segment_sum(&mut self, x: Var, ids: &[usize], segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if ids.len() != xv.rows() {
            return Err(TensorError::Shape {
                op: "segment_sum",
                left: xv.shape(),
                right: (ids.len(), 1),
            });
        }
        let mut value = Tensor::zeros(segments, xv.cols());
        for (r, &s) in ids.iter().enumerate() {
            if s >= segments {
                return Err(TensorError::Segment { id: s, segments });
            }
            for (o, v) in value.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        Ok(self.push(value, Op::SegmentSum(x, ids.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Mean over all entries; an empty tensor has mean 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len();
        let m = if n == 0 { 0.0 } else { v.sum() / n as f64 };
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.iter_rows().map(|r| r.iter().sum()).collect::<Vec<f64>>();
        let value = Tensor::from_vec(v.rows(), 1, data).expect("row sums");
        self.push(value, Op::RowSum(x))
    }

    pub(crate) fn batch_norm_train_raw(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        check_affine(xv, self.value(gamma), self.value(beta))?;
        if n < 2 {
            return Err(TensorError::BatchTooSmall(n));
        }
        let mut mean = vec![0.0; c];
        for row in xv.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in xv.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for (j, v) in xhat.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = xhat.clone();
        for r in 0..n {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        let out = self.push(
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((out, mean, var))
    }

    pub(crate) fn batch_norm_eval_raw(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        check_affine(xv, self.value(gamma), self.value(beta))?;
        if mean.len() != xv.cols() || var.len() != xv.cols() {
            return Err(TensorError::Shape {
                op: "batch_norm_eval",
                left: xv.shape(),
                right: (1, mean.len()),
            });
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = xv.clone();
        for r in 0..y.rows() {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j] * g[j] + b[j];
            }
        }
        Ok(self.push(
            y,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    /// Mean binary cross-entropy between `targets` and `σ(logits)`, computed
    /// from the logits for numerical stability.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        lv.expect_same_shape(targets, "bce_with_logits")?;
        let n = lv.len();
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum();
        let value = Tensor::scalar(if n == 0 { 0.0 } else { total / n as f64 });
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.clone(),
            },
        ))
    }

    /// Records an operation with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul(&val(*b).transpose())?);
                accumulate(grads, *b, val(*a).transpose().matmul(g)?);
            }
            Op::Linear(x, w) => {
                accumulate(grads, *x, g.matmul(val(*w))?);
                accumulate(grads, *w, g.transpose().matmul(val(*x))?);
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Hadamard(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), "hadamard", |x, y| x * y)?);
                accumulate(grads, *b, g.zip_map(val(*a), "hadamard", |x, y| x * y)?);
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                accumulate(grads, *a, g.zip_map(bv, "div", |x, y| x / y)?);
                // d(a/b)/db = -(a/b)/b
                let q = node.value.zip_map(bv, "div", |q, y| -q / y)?;
                accumulate(grads, *b, g.zip_map(&q, "div", |x, y| x * y)?);
            }
            Op::AddRow(x, bias) => {
                accumulate(grads, *x, g.clone());
                let mut col = Tensor::zeros(1, g.cols());
                for row in g.iter_rows() {
                    for (c, v) in col.data_mut().iter_mut().zip(row) {
                        *c += v;
                    }
                }
                accumulate(grads, *bias, col);
            }
            Op::Scale(x, f) => accumulate(grads, *x, g.map(|v| v * f)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let mask = val(*x);
                accumulate(
                    grads,
                    *x,
                    g.zip_map(mask, "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?,
                );
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                accumulate(grads, *x, d);
            }
            Op::LogSigmoid(x) => {
                let d = g.zip_map(val(*x), "log_sigmoid", |gv, xv| gv * sigmoid(-xv))?;
                accumulate(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut part = Tensor::zeros(g.rows(), pc);
                    for r in 0..g.rows() {
                        part.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    accumulate(grads, p, part);
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = val(p).shape();
                    let data = g.data()[offset * pc..(offset + pr) * pc].to_vec();
                    accumulate(grads, p, Tensor::from_vec(pr, pc, data)?);
                    offset += pr;
                }
            }
            Op::GatherRows(x, index) => {
                let mut d = Tensor::zeros(val(*x).rows(), g.cols());
                for (k, &i) in index.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::SegmentSum(x, ids) => {
                let mut d = Tensor::zeros(ids.len(), g.cols());
                for (r, &s) in ids.iter().enumerate() {
                    d.row_mut(r).copy_from_slice(g.row(s));
                }
                accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                let n = (r * c).max(1) as f64;
                accumulate(grads, *x, Tensor::filled(r, c, g.item() / n));
            }
            Op::RowSum(x) => {
                let (r, c) = val(*x).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).fill(g.get(i, 0));
                }
                accumulate(grads, *x, d);
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        dgamma[j] += g.get(r, j) * xhat.get(r, j);
                        dbeta[j] += g.get(r, j);
                    }
                }
                let nf = n as f64;
                let mut dx = Tensor::zeros(n, c);
                for r in 0..n {
                    for j in 0..c {
                        // dxhat = g * gamma; sums of dxhat and dxhat*xhat are gamma*dbeta, gamma*dgamma
                        let dxhat = g.get(r, j) * gam[j];
                        let v = inv_std[j] / nf
                            * (nf * dxhat - gam[j] * dbeta[j] - xhat.get(r, j) * gam[j] * dgamma[j]);
                        dx.set(r, j, v);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, Tensor::row_vector(&dgamma));
                accumulate(grads, *beta, Tensor::row_vector(&dbeta));
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let xv = val(*x);
                let (n, c) = xv.shape();
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = Tensor::zeros(n, c);
                for r in 0..n {
                    for j in 0..c {
                        let gv = g.get(r, j);
                        dgamma[j] += gv * (xv.get(r, j) - mean[j]) * inv_std[j];
                        dbeta[j] += gv;
                        dx.set(r, j, gv * inv_std[j] * gam[j]);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, Tensor::row_vector(&dgamma));
                accumulate(grads, *beta, Tensor::row_vector(&dbeta));
            }
            Op::BceWithLogits { logits, targets } => {
                let n = targets.len().max(1) as f64;
                let scale = g.item() / n;
                let d = val(*logits).zip_map(targets, "bce_with_logits", |z, t| {
                    (sigmoid(z) - t) * scale
                })?;
                accumulate(grads, *logits, d);
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let parts = backward(&values, &node.value, g);
                if parts.len() != inputs.len() {
                    return Err(TensorError::Invalid(format!(
                        "custom backward returned {} gradients for {} inputs",
                        parts.len(),
                        inputs.len()
                    )));
                }
                for (&v, part) in inputs.iter().zip(parts) {
                    val(v).expect_same_shape(&part, "custom")?;
                    accumulate(grads, v, part);
                }
            }
        }
        Ok(())
    }
}

fn check_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    for p in [gamma, beta] {
        if p.shape() != (1, x.cols()) {
            return Err(TensorError::Shape {
                op: "batch_norm",
                left: x.shape(),
                right: p.shape(),
            });
        }
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Edge gate normalization: per edge, `σ(ê)` divided componentwise by the sum
/// of `σ(ê)` over all edges sharing the same receiving node, plus `eps`.
pub fn gate_normalize(
    tape: &mut Tape,
    e_hat: Var,
    receivers: &[usize],
    nodes: usize,
    eps: f64,
) -> Result<Var> {
    let s = tape.sigmoid(e_hat);
    let totals = tape.segment_sum(s, receivers, nodes)?;
    let per_edge = tape.gather_rows(totals, receivers)?;
    let denom = tape.add_scalar(per_edge, eps);
    tape.div(s, denom)
}
