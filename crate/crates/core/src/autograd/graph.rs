use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Powf(Var, f64),
    Atan(Var),
    Softplus(Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanAxis0(Var),
    LogSoftmax(Var),
    MaskedLogSumExp(Var, Vec<bool>),
    SelectRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    GradReverse(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every trainable leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn require_matrix(op: &'static str, a: &Tensor) -> Result<()> {
    if !a.is_matrix() {
        return contract(format!("{op} expects a matrix, got shape {:?}", a.shape()));
    }
    Ok(())
}

fn row_broadcast_check(op: &'static str, x: &Tensor, row: &Tensor) -> Result<()> {
    require_matrix(op, x)?;
    if row.shape() != [x.cols()] {
        return Err(Error::Shape {
            op,
            left: x.shape().to_vec(),
            right: row.shape().to_vec(),
        });
    }
    Ok(())
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let max = values.clone().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf; it is trainable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Adds a constant leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copy of a node's value with no link back into the graph.
    pub fn detach(&self, v: Var) -> Tensor {
        let mut t = self.nodes[v.0].value.clone();
        if t.requires_grad() {
            t = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        }
        t
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        same_shape("mul_const", self.value(x), &c)?;
        let value = self.value(x).zip_map(&c, |a, b| a * b);
        let rg = self.rg(x);
        Ok(self.push(value, Op::MulConst(x, c), rg))
    }

    /// `x[i, j] + row[j]`, the bias broadcast.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        row_broadcast_check("add_row", self.value(x), self.value(row))?;
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv.data()[i % c])
            .collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    /// `x[i, j] * row[j]`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        row_broadcast_check("mul_row", self.value(x), self.value(row))?;
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * rv.data()[i % c])
            .collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::MulRow(x, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.cols() != bv.rows() {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let value = av.matmul(bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        require_matrix("transpose", self.value(x))?;
        let value = self.value(x).transpose();
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, stable_sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn atan(&mut self, x: Var) -> Var {
        self.unary(x, f64::atan, Op::Atan(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p(), Op::Softplus(x))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.sum() / xv.numel() as f64);
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Row sums of a matrix: `[N, C] -> [N]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        require_matrix("sum_rows", self.value(x))?;
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|i| xv.row(i).iter().sum()).collect();
        let value = Tensor::from_parts(vec![xv.rows()], data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumRows(x), rg))
    }

    /// Column means of a matrix: `[N, C] -> [C]`.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        require_matrix("mean_axis0", self.value(x))?;
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; c];
        for i in 0..n {
            for (d, v) in data.iter_mut().zip(xv.row(i)) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= n as f64;
        }
        let value = Tensor::from_parts(vec![c], data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::MeanAxis0(x), rg))
    }

    /// Log-softmax over the last axis of a matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        require_matrix("log_softmax", self.value(x))?;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.numel());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let lse = log_sum_exp(row.iter());
            data.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    /// Per-row log-sum-exp over the entries where `mask` is true:
    /// `[N, M] -> [N]`. Rows with an empty mask yield 0 and receive no gradient.
    pub fn masked_log_sum_exp(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        require_matrix("masked_log_sum_exp", self.value(x))?;
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::Shape {
                op: "masked_log_sum_exp",
                left: xv.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let c = xv.cols();
        let data = (0..xv.rows())
            .map(|i| {
                let m = &mask[i * c..(i + 1) * c];
                if !m.iter().any(|&b| b) {
                    return 0.0;
                }
                let picked: Vec<f64> = xv
                    .row(i)
                    .iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(v, _)| *v)
                    .collect();
                log_sum_exp(picked.iter())
            })
            .collect();
        let value = Tensor::from_parts(vec![xv.rows()], data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaskedLogSumExp(x, mask), rg))
    }

    pub fn select_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        require_matrix("select_rows", self.value(x))?;
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return contract(format!("select_rows: row {bad} out of range for {:?}", xv.shape()));
        }
        if idx.is_empty() {
            return contract("select_rows: empty selection");
        }
        let value = xv.select_rows(&idx);
        let rg = self.rg(x);
        Ok(self.push(value, Op::SelectRows(x, idx), rg))
    }

    pub fn select_cols(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        require_matrix("select_cols", self.value(x))?;
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&j| j >= xv.cols()) {
            return contract(format!("select_cols: column {bad} out of range for {:?}", xv.shape()));
        }
        if idx.is_empty() {
            return contract("select_cols: empty selection");
        }
        let mut data = Vec::with_capacity(xv.rows() * idx.len());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        let value = Tensor::from_parts(vec![xv.rows(), idx.len()], data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::SelectCols(x, idx), rg))
    }

    /// Identity on the forward pass; scales the incoming gradient by `-coeff`.
    pub fn gradient_reverse(&mut self, x: Var, coeff: f64) -> Result<Var> {
        if !(coeff > 0.0 && coeff.is_finite()) {
            return contract(format!("gradient reversal coefficient must be positive, got {coeff}"));
        }
        let value = self.value(x).clone();
        let rg = self.rg(x);
        Ok(self.push(value, Op::GradReverse(x, coeff), rg))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            ));
        }
        self.backward_with(loss, Tensor::full(lv.shape(), 1.0))
    }

    /// Reverse sweep seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, upstream: Tensor) -> Result<GradientMap> {
        same_shape("backward_with", self.value(output), &upstream)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(upstream);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut map = GradientMap::default();
        for (idx, node) in self.nodes[..=output.0].iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.grads.insert(Var(idx), g);
            }
        }
        Ok(map)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let y = &node.value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |gi, bi| gi * bi));
                acc(*b, g.zip_map(val(*a), |gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, g.zip_map(bv, |gi, bi| gi / bi));
                let gb = g.zip_map(&av.zip_map(bv, |ai, bi| ai / (bi * bi)), |gi, q| -gi * q);
                acc(*b, gb);
            }
            Op::Neg(x) => acc(*x, g.scale(-1.0)),
            Op::Scale(x, c) => acc(*x, g.scale(*c)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::MulConst(x, c) => acc(*x, g.zip_map(c, |gi, ci| gi * ci)),
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                acc(*row, column_sums(g));
            }
            Op::MulRow(x, row) => {
                let (xv, rv) = (val(*x), val(*row));
                let c = xv.cols();
                let gx = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * rv.data()[i % c])
                    .collect();
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), gx));
                acc(*row, column_sums(&g.zip_map(xv, |gi, xi| gi * xi)));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul(&bv.transpose()));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, av.transpose().matmul(g));
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Relu(x) => acc(*x, g.zip_map(val(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Exp(x) => acc(*x, g.zip_map(y, |gi, yi| gi * yi)),
            Op::Log(x) => acc(*x, g.zip_map(val(*x), |gi, xi| gi / xi)),
            Op::Sqrt(x) => acc(*x, g.zip_map(y, |gi, yi| gi / (2.0 * yi))),
            Op::Powf(x, p) => {
                let p = *p;
                acc(*x, g.zip_map(val(*x), |gi, xi| gi * p * xi.powf(p - 1.0)));
            }
            Op::Atan(x) => acc(*x, g.zip_map(val(*x), |gi, xi| gi / (1.0 + xi * xi))),
            Op::Softplus(x) => acc(*x, g.zip_map(val(*x), |gi, xi| gi * stable_sigmoid(xi))),
            Op::Maximum(a, b) => {
                let mask = val(*a).zip_map(val(*b), |ai, bi| if ai >= bi { 1.0 } else { 0.0 });
                acc(*a, g.zip_map(&mask, |gi, m| gi * m));
                acc(*b, g.zip_map(&mask, |gi, m| gi * (1.0 - m)));
            }
            Op::Minimum(a, b) => {
                let mask = val(*a).zip_map(val(*b), |ai, bi| if ai <= bi { 1.0 } else { 0.0 });
                acc(*a, g.zip_map(&mask, |gi, m| gi * m));
                acc(*b, g.zip_map(&mask, |gi, m| gi * (1.0 - m)));
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let xv = val(*x);
                acc(*x, Tensor::full(xv.shape(), g.item() / xv.numel() as f64));
            }
            Op::SumRows(x) => {
                let xv = val(*x);
                let c = xv.cols();
                let data = (0..xv.numel()).map(|i| g.data()[i / c]).collect();
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::MeanAxis0(x) => {
                let xv = val(*x);
                let (n, c) = (xv.rows(), xv.cols());
                let data = (0..xv.numel()).map(|i| g.data()[i % c] / n as f64).collect();
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                let mut data = Vec::with_capacity(y.numel());
                for i in 0..y.rows() {
                    let g_row = &g.data()[i * c..(i + 1) * c];
                    let g_sum: f64 = g_row.iter().sum();
                    data.extend(
                        y.row(i)
                            .iter()
                            .zip(g_row)
                            .map(|(yi, gi)| gi - yi.exp() * g_sum),
                    );
                }
                acc(*x, Tensor::from_parts(y.shape().to_vec(), data));
            }
            Op::MaskedLogSumExp(x, mask) => {
                let xv = val(*x);
                let c = xv.cols();
                let mut data = vec![0.0; xv.numel()];
                for i in 0..xv.rows() {
                    let m = &mask[i * c..(i + 1) * c];
                    if !m.iter().any(|&b| b) {
                        continue;
                    }
                    let lse = y.data()[i];
                    for (j, &keep) in m.iter().enumerate() {
                        if keep {
                            data[i * c + j] = g.data()[i] * (xv.row(i)[j] - lse).exp();
                        }
                    }
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::SelectRows(x, idx) => {
                let xv = val(*x);
                let c = xv.cols();
                let mut data = vec![0.0; xv.numel()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        data[i * c + j] += g.data()[k * c + j];
                    }
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::SelectCols(x, idx) => {
                let xv = val(*x);
                let (c, k) = (xv.cols(), idx.len());
                let mut data = vec![0.0; xv.numel()];
                for i in 0..xv.rows() {
                    for (kk, &j) in idx.iter().enumerate() {
                        data[i * c + j] += g.data()[i * k + kk];
                    }
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::GradReverse(x, coeff) => acc(*x, g.scale(-coeff)),
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![c], out)
}
