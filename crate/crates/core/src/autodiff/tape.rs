use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Selu(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SetRows { base: Var, rows: Arc<[usize]>, src: Var },
    SumByGroup { x: Var, groups: Arc<[usize]> },
    MeanByGroup { x: Var, groups: Arc<[usize]>, counts: Vec<usize> },
    Dropout(Var, Vec<f64>),
    Mse(Var, Var),
    Sqrt(Var),
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records operations in execution order; since every node only refers to
/// earlier nodes, reverse insertion order is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Registers a trainable leaf. Parameters are numbered in registration order.
    pub fn param(&mut self, value: &Tensor) -> Var {
        let v = self.push_raw(Op::Leaf, value.clone(), true);
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(op, value, needs_grad)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        self.check_same(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_vec(x.rows(), x.cols(), data))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|&v| f(v)).collect())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch(format!("matmul: {m}x{k} by {k2}x{n}")));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(self.value(a), false, self.value(b), false, &mut out, 0.0);
        Ok(self.push(Op::MatMul(a, b), out, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_map(a, b, "add", |p, q| p + q)?;
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_map(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(Op::Sub(a, b), out, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_map(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    /// Adds the `1 x d` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let ((n, d), bshape) = (self.shape(x), self.shape(bias));
        if bshape != (1, d) {
            return Err(AutodiffError::ShapeMismatch(format!("add_row: {n}x{d} plus {bshape:?}")));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).as_slice().to_vec();
        for r in 0..n {
            out.row_mut(r).iter_mut().zip(&b).for_each(|(o, bv)| *o += bv);
        }
        Ok(self.push(Op::AddRow(x, bias), out, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| c * v);
        self.push(Op::Scale(x, c), out, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.push(Op::Sigmoid(x), out, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(Op::Tanh(x), out, &[x])
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let out = self.map(x, selu);
        self.push(Op::Selu(x), out, &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let ((n, da), (n2, db)) = (self.shape(a), self.shape(b));
        if n != n2 {
            return Err(AutodiffError::ShapeMismatch(format!("concat_cols: {n} vs {n2} rows")));
        }
        let (x, y) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(n * (da + db));
        for r in 0..n {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        Ok(self.push(Op::ConcatCols(a, b), Tensor::from_vec(n, da + db, data), &[a, b]))
    }

    /// Stacks the inputs vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = parts.first().map(|&v| self.shape(v).1).ok_or_else(|| {
            AutodiffError::ShapeMismatch("concat_rows of nothing".into())
        })?;
        if parts.iter().any(|&v| self.shape(v).1 != cols) {
            return Err(AutodiffError::ShapeMismatch("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        for &v in parts {
            data.extend_from_slice(self.value(v).as_slice());
        }
        let rows = parts.iter().map(|&v| self.shape(v).0).sum();
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, cols, data), parts))
    }

    /// Output row `i` is input row `rows[i]`.
    pub fn gather_rows(&mut self, x: Var, rows: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let (n, d) = self.shape(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(AutodiffError::ShapeMismatch(format!("gather_rows: row {bad} of {n}")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows.iter() {
            data.extend_from_slice(src.row(r));
        }
        let out = Tensor::from_vec(rows.len(), d, data);
        Ok(self.push(Op::GatherRows(x, rows), out, &[x]))
    }

    /// Copy of `base` with row `rows[i]` replaced by row `i` of `src`.
    /// `rows` must not contain duplicates.
    pub fn set_rows(&mut self, base: Var, rows: Arc<[usize]>, src: Var) -> Result<Var, AutodiffError> {
        let ((n, d), (m, d2)) = (self.shape(base), self.shape(src));
        if d != d2 || m != rows.len() || rows.iter().any(|&r| r >= n) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "set_rows: {m}x{d2} into {n}x{d} at {} rows",
                rows.len()
            )));
        }
        let mut out = self.value(base).clone();
        let s = self.value(src);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(s.row(i));
        }
        Ok(self.push(Op::SetRows { base, rows, src }, out, &[base, src]))
    }

    /// Output row `g` is the sum, in input order, of the rows `r` with
    /// `groups[r] == g`; empty groups give zero rows.
    pub fn sum_rows_by_group(&mut self, x: Var, groups: Arc<[usize]>, n_groups: usize) -> Result<Var, AutodiffError> {
        let out = self.group_sum(x, &groups, n_groups)?;
        Ok(self.push(Op::SumByGroup { x, groups }, out, &[x]))
    }

    /// Like [`Tape::sum_rows_by_group`] but divides each group by its size.
    pub fn mean_rows_by_group(&mut self, x: Var, groups: Arc<[usize]>, n_groups: usize) -> Result<Var, AutodiffError> {
        let mut out = self.group_sum(x, &groups, n_groups)?;
        let mut counts = vec![0usize; n_groups];
        groups.iter().for_each(|&g| counts[g] += 1);
        for (g, &c) in counts.iter().enumerate() {
            if c > 1 {
                let inv = c as f64;
                out.row_mut(g).iter_mut().for_each(|v| *v /= inv);
            }
        }
        Ok(self.push(Op::MeanByGroup { x, groups, counts }, out, &[x]))
    }

    fn group_sum(&self, x: Var, groups: &[usize], n_groups: usize) -> Result<Tensor, AutodiffError> {
        let (n, d) = self.shape(x);
        if groups.len() != n || groups.iter().any(|&g| g >= n_groups) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "group aggregation: {} labels for {n} rows into {n_groups} groups",
                groups.len()
            )));
        }
        let src = self.value(x);
        let mut out = Tensor::zeros(n_groups, d);
        for (r, &g) in groups.iter().enumerate() {
            out.row_mut(g).iter_mut().zip(src.row(r)).for_each(|(o, v)| *o += v);
        }
        Ok(out)
    }

    /// Inverted dropout: each entry is zeroed with probability `p` and
    /// survivors are scaled by `1/(1-p)`. With `train == false` this is the
    /// identity and records nothing.
    pub fn dropout<R: rand::Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let src = self.value(x);
        let data = src.as_slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(src.rows(), src.cols(), data);
        Ok(self.push(Op::Dropout(x, mask), out, &[x]))
    }

    /// Scalar `mean((a - b)^2)`.
    pub fn mse_reduce(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check_same(a, b, "mse_reduce")?;
        let (x, y) = (self.value(a), self.value(b));
        if x.is_empty() {
            return Err(AutodiffError::ShapeMismatch("mse_reduce of empty tensors".into()));
        }
        let sse: f64 = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q) * (p - q)).sum();
        let out = Tensor::scalar(sse / x.len() as f64);
        Ok(self.push(Op::Mse(a, b), out, &[a, b]))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::sqrt);
        self.push(Op::Sqrt(x), out, &[x])
    }

    /// Scalar sum of squared entries.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum_squares());
        self.push(Op::SumSquares(x), out, &[x])
    }

    /// Scalar sum of entries.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).as_slice().iter().sum());
        self.push(Op::Sum(x), out, &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.shape(loss) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = self.slot(grads, *a);
                    gemm(g, false, bv, true, ga, 1.0);
                }
                if self.wants(*b) {
                    let gb = self.slot(grads, *b);
                    gemm(av, true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.add_assign(g));
                self.accumulate(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.add_assign(g));
                self.accumulate(grads, *b, |gb| axpy(gb.as_mut_slice(), -1.0, g.as_slice()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| fma_into(ga, g, bv));
                self.accumulate(grads, *b, |gb| fma_into(gb, g, av));
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, |gx| gx.add_assign(g));
                self.accumulate(grads, *bias, |gb| {
                    for r in 0..g.rows() {
                        gb.as_mut_slice().iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, |gx| axpy(gx.as_mut_slice(), *c, g.as_slice())),
            Op::Sigmoid(x) => self.unary(grads, *x, g, |_, out| out * (1.0 - out), y),
            Op::Tanh(x) => self.unary(grads, *x, g, |_, out| 1.0 - out * out, y),
            Op::Selu(x) => self.unary(grads, *x, g, selu_grad, y),
            Op::Sqrt(x) => self.unary(grads, *x, g, |_, out| if out > 0.0 { 0.5 / out } else { 0.0 }, y),
            Op::ConcatCols(a, b) => {
                let da = self.shape(*a).1;
                self.accumulate(grads, *a, |ga| {
                    for r in 0..g.rows() {
                        axpy(ga.row_mut(r), 1.0, &g.row(r)[..da]);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for r in 0..g.rows() {
                        axpy(gb.row_mut(r), 1.0, &g.row(r)[da..]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p).0 * cols;
                    let chunk = &g.as_slice()[start..start + n];
                    self.accumulate(grads, p, |gp| axpy(gp.as_mut_slice(), 1.0, chunk));
                    start += n;
                }
            }
            Op::GatherRows(x, rows) => self.accumulate(grads, *x, |gx| {
                for (i, &r) in rows.iter().enumerate() {
                    axpy(gx.row_mut(r), 1.0, g.row(i));
                }
            }),
            Op::SetRows { base, rows, src } => {
                self.accumulate(grads, *base, |gb| {
                    let mut replaced = vec![false; g.rows()];
                    rows.iter().for_each(|&r| replaced[r] = true);
                    for (r, _) in replaced.iter().enumerate().filter(|(_, &skip)| !skip) {
                        axpy(gb.row_mut(r), 1.0, g.row(r));
                    }
                });
                self.accumulate(grads, *src, |gs| {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(gs.row_mut(i), 1.0, g.row(r));
                    }
                });
            }
            Op::SumByGroup { x, groups } => self.accumulate(grads, *x, |gx| {
                for (r, &grp) in groups.iter().enumerate() {
                    axpy(gx.row_mut(r), 1.0, g.row(grp));
                }
            }),
            Op::MeanByGroup { x, groups, counts } => self.accumulate(grads, *x, |gx| {
                for (r, &grp) in groups.iter().enumerate() {
                    axpy(gx.row_mut(r), 1.0 / counts[grp] as f64, g.row(grp));
                }
            }),
            Op::Dropout(x, mask) => self.accumulate(grads, *x, |gx| {
                gx.as_mut_slice()
                    .iter_mut()
                    .zip(g.as_slice().iter().zip(mask))
                    .for_each(|(o, (gv, m))| *o += gv * m);
            }),
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = 2.0 * g.item() / av.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    ga.as_mut_slice()
                        .iter_mut()
                        .zip(av.as_slice().iter().zip(bv.as_slice()))
                        .for_each(|(o, (p, q))| *o += c * (p - q));
                });
                self.accumulate(grads, *b, |gb| {
                    gb.as_mut_slice()
                        .iter_mut()
                        .zip(av.as_slice().iter().zip(bv.as_slice()))
                        .for_each(|(o, (p, q))| *o -= c * (p - q));
                });
            }
            Op::SumSquares(x) => {
                let c = 2.0 * g.item();
                let xv = self.value(*x);
                self.accumulate(grads, *x, |gx| axpy(gx.as_mut_slice(), c, xv.as_slice()));
            }
            Op::Sum(x) => {
                let c = g.item();
                self.accumulate(grads, *x, |gx| gx.as_mut_slice().iter_mut().for_each(|o| *o += c));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let (r, c) = self.shape(v);
        grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if self.wants(v) {
            f(self.slot(grads, v));
        }
    }

    /// Elementwise op whose local derivative depends on its input and output.
    fn unary(&self, grads: &mut [Option<Tensor>], x: Var, g: &Tensor, d: impl Fn(f64, f64) -> f64, y: &Tensor) {
        let xv = self.value(x);
        self.accumulate(grads, x, |gx| {
            for ((o, gv), (inp, out)) in gx
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(xv.as_slice().iter().zip(y.as_slice()))
            {
                *o += gv * d(*inp, *out);
            }
        });
    }
}

fn axpy(out: &mut [f64], c: f64, x: &[f64]) {
    out.iter_mut().zip(x).for_each(|(o, v)| *o += c * v);
}

fn fma_into(out: &mut Tensor, g: &Tensor, other: &Tensor) {
    out.as_mut_slice()
        .iter_mut()
        .zip(g.as_slice().iter().zip(other.as_slice()))
        .for_each(|(o, (gv, ov))| *o += gv * ov);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

fn selu_grad(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        y + SELU_SCALE * SELU_ALPHA
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient of a parameter; `None` for intermediate nodes and for
    /// parameters that do not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every registered parameter, in registration order;
    /// parameters the loss does not reach get zeros.
    pub fn param_grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&v| {
                self.wrt(v).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.shape(v);
                    Tensor::zeros(r, c)
                })
            })
            .collect()
    }
}
