//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends one node holding its value and the indices of its
//! operands. [`Tape::backward`] walks the nodes once in reverse order of
//! recording and sums the incoming gradient of each node into its operands,
//! so tensors used several times (fan-out) receive the total gradient.
//!
//! Leaves are either trainable parameters or constants. Gradients are only
//! propagated along paths that reach a parameter.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    AppendOnes(Var),
    Transpose(Var),
    ZeroDiagonal(Var),
    StackRows(Vec<Var>),
    Row(Var, usize),
    SoftmaxColumns(Var),
    ScaleColumns { weights: Var, input: Var },
    Sum(Var),
    SumSquares(Var),
    SumAbs(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; a zero matrix of matching
    /// shape when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Matrix {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

/// Numerically stable softmax: subtracts the maximum before exponentiating.
pub fn softmax_stable(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn activate(x: &Matrix, kind: Activation) -> Matrix {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Tanh => x.map(f64::tanh),
    }
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

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, true)
    }

    /// Registers a leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.get(0, 0)
    }

    fn push_leaf(&mut self, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let needs_grad = self.operands(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn operands(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::ScaleColumns { weights, input } => vec![*weights, *input],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::AppendOnes(a)
            | Op::Transpose(a)
            | Op::ZeroDiagonal(a)
            | Op::Row(a, _)
            | Op::SoftmaxColumns(a)
            | Op::Sum(a)
            | Op::SumSquares(a)
            | Op::SumAbs(a) => vec![*a],
            Op::StackRows(vs) => vs.clone(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), "scale")
    }

    /// Sum of several same-shaped nodes, left to right.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Argument("add_all of no operands".into()))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let value = activate(self.value(a), kind);
        let op = match kind {
            Activation::Relu => Op::Relu(a),
            Activation::Tanh => Op::Tanh(a),
        };
        self.push(value, op, "activation")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    /// `[a; 1ᵀ]`, the bias augmentation used by every affine block.
    pub fn append_ones(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).append_ones_row();
        self.push(value, Op::AppendOnes(a), "append_ones")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), "transpose")
    }

    /// Copy of a square matrix with its diagonal masked to zero. The mask is
    /// not differentiable: diagonal entries receive no gradient through it.
    pub fn zero_diagonal(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != m.cols() {
            return Err(Error::Shape {
                op: "zero_diagonal",
                left: m.shape(),
                right: (m.cols(), m.rows()),
            });
        }
        let value = m.without_diagonal();
        self.push(value, Op::ZeroDiagonal(a), "zero_diagonal")
    }

    /// Vertical concatenation of nodes with equal column counts.
    pub fn stack_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Argument("stack_rows of no operands".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in vars {
            let m = self.value(v);
            if m.cols() != cols {
                return Err(Error::Shape {
                    op: "stack_rows",
                    left: self.value(*first).shape(),
                    right: m.shape(),
                });
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        self.push(
            Matrix::from_raw(rows, cols, data),
            Op::StackRows(vars.to_vec()),
            "stack_rows",
        )
    }

    /// Row `i` of `a` as a 1×cols node.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let m = self.value(a);
        if i >= m.rows() {
            return Err(Error::Argument(format!("row {i} of a {}x{} node", m.rows(), m.cols())));
        }
        let value = Matrix::from_raw(1, m.cols(), m.row(i).to_vec());
        self.push(value, Op::Row(a, i), "row")
    }

    /// Column-wise stable softmax: each column of the result is a
    /// probability vector over the rows.
    pub fn softmax_columns(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::Argument("softmax over zero rows".into()));
        }
        let (rows, cols) = m.shape();
        let mut out = Matrix::zeros(rows, cols);
        let mut column = vec![0.0; rows];
        for c in 0..cols {
            for (r, slot) in column.iter_mut().enumerate() {
                *slot = m.get(r, c);
            }
            for (r, p) in softmax_stable(&column)?.into_iter().enumerate() {
                out.set(r, c, p);
            }
        }
        self.push(out, Op::SoftmaxColumns(a), "softmax_columns")
    }

    /// Scales column `n` of `input` by `weights[0, n]`.
    pub fn scale_columns(&mut self, weights: Var, input: Var) -> Result<Var> {
        let w = self.value(weights);
        let x = self.value(input);
        if w.rows() != 1 || w.cols() != x.cols() {
            return Err(Error::Shape {
                op: "scale_columns",
                left: w.shape(),
                right: x.shape(),
            });
        }
        let value = Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) * w.get(0, c));
        self.push(value, Op::ScaleColumns { weights, input }, "scale_columns")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        self.push(value, Op::Sum(a), "sum")
    }

    /// Squared Frobenius norm as a 1×1 node.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_raw(1, 1, vec![self.value(a).frobenius_sq()]);
        self.push(value, Op::SumSquares(a), "sum_squares")
    }

    /// Entrywise absolute sum as a 1×1 node; the subgradient at 0 is 0.
    pub fn sum_abs(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_raw(1, 1, vec![self.value(a).abs_sum()]);
        self.push(value, Op::SumAbs(a), "sum_abs")
    }

    /// Gradients of the 1×1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got a {}x{} node",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.needs_grad || !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], var: Var, delta: Matrix) -> Result<()> {
        if !self.nodes[var.0].needs_grad {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul_nt(self.value(*b))?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.needs(*b) {
                    let db = self.value(*a).matmul_tn(g)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s))?,
            Op::Relu(a) => {
                let da = g.zip_map(self.value(*a), "relu_backward", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, da)?;
            }
            Op::Tanh(a) => {
                let da = g.zip_map(&node.value, "tanh_backward", |gv, y| gv * (1.0 - y * y))?;
                self.accumulate(grads, *a, da)?;
            }
            Op::AppendOnes(a) => {
                let (rows, cols) = self.shape(*a);
                let da = Matrix::from_raw(rows, cols, g.data()[..rows * cols].to_vec());
                self.accumulate(grads, *a, da)?;
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::ZeroDiagonal(a) => self.accumulate(grads, *a, g.without_diagonal())?,
            Op::StackRows(vars) => {
                let cols = g.cols();
                let mut offset = 0;
                for &v in vars {
                    let rows = self.shape(v).0;
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    self.accumulate(grads, v, Matrix::from_raw(rows, cols, slice))?;
                }
            }
            Op::Row(a, i) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Matrix::zeros(rows, cols);
                da.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(g.data());
                self.accumulate(grads, *a, da)?;
            }
            Op::SoftmaxColumns(a) => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut da = Matrix::zeros(rows, cols);
                for c in 0..cols {
                    let dot: f64 = (0..rows).map(|r| y.get(r, c) * g.get(r, c)).sum();
                    for r in 0..rows {
                        da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.accumulate(grads, *a, da)?;
            }
            Op::ScaleColumns { weights, input } => {
                let w = self.value(*weights);
                let x = self.value(*input);
                if self.needs(*input) {
                    let dx = Matrix::from_fn(x.rows(), x.cols(), |r, c| g.get(r, c) * w.get(0, c));
                    self.accumulate(grads, *input, dx)?;
                }
                if self.needs(*weights) {
                    let dw = Matrix::from_fn(1, x.cols(), |_, c| {
                        (0..x.rows()).map(|r| g.get(r, c) * x.get(r, c)).sum()
                    });
                    self.accumulate(grads, *weights, dw)?;
                }
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(rows, cols, g.get(0, 0)))?;
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.get(0, 0);
                self.accumulate(grads, *a, self.value(*a).scale(s))?;
            }
            Op::SumAbs(a) => {
                let s = g.get(0, 0);
                let da = self.value(*a).map(|x| {
                    if x > 0.0 {
                        s
                    } else if x < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, da)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` with respect to `x`.
    fn finite_diff(x: &Matrix, h: f64, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn relu_and_tanh_values() {
        let x = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(activate(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(activate(&Matrix::zeros(1, 1), Activation::Tanh).data(), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_stable(&[0.0, 0.0, 0.0]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_stable(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            softmax_stable(&[5.0, 5.0, 5.0]).unwrap(),
            softmax_stable(&[0.0; 3]).unwrap()
        );
        assert!(softmax_stable(&[]).is_err());
        assert_eq!(softmax_stable(&[3.7]).unwrap(), vec![1.0]);
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let x = tape.constant(Matrix::column_vector(&[0.5, -1.0, 2.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let expected = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.5, -1.0, 2.0]]).unwrap();
        assert_eq!(grads.get(w), expected);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::filled(2, 2, 1.0));
        let unused = tape.param(Matrix::filled(3, 4, 1.0));
        let loss = tape.sum_squares(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused), Matrix::zeros(3, 4));
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::filled(1, 1, 3.0));
        let b = tape.add(a, a).unwrap();
        let c = tape.add(b, a).unwrap();
        let grads = tape.backward(c).unwrap();
        assert_eq!(grads.get(a).get(0, 0), 3.0);
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = random(4, 5, &mut rng);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = tape.tanh(x).unwrap();
        let loss = tape.sum(y).unwrap();
        let analytic = tape.backward(loss).unwrap().get(x);
        let numeric = finite_diff(&x0, 1e-5, &|m| m.map(f64::tanh).sum());
        assert!(max_rel_err(&analytic, &numeric) < 1e-6);
    }

    /// Composite of every primitive, checked against finite differences.
    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w0 = random(3, 5, &mut rng);
        let x0 = random(4, 6, &mut rng);
        let c0 = random(6, 6, &mut rng);
        let build = |w: &Matrix, x: &Matrix, c: &Matrix, record: bool| -> (f64, Option<[Matrix; 3]>) {
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let xv = tape.param(x.clone());
            let cv = tape.param(c.clone());
            let aug = tape.append_ones(xv).unwrap();
            let h = tape.matmul(wv, aug).unwrap();
            let h = tape.tanh(h).unwrap();
            let cm = tape.zero_diagonal(cv).unwrap();
            let hs = tape.matmul(h, cm).unwrap();
            let r0 = tape.row(hs, 0).unwrap();
            let r1 = tape.row(h, 1).unwrap();
            let st = tape.stack_rows(&[r0, r1]).unwrap();
            let sm = tape.softmax_columns(st).unwrap();
            let a = tape.row(sm, 0).unwrap();
            let sc = tape.scale_columns(a, h).unwrap();
            let t = tape.transpose(sc).unwrap();
            let rl = tape.relu(t).unwrap();
            let diff = tape.sub(hs, h).unwrap();
            let l1 = tape.sum_squares(diff).unwrap();
            let l2 = tape.sum_abs(rl).unwrap();
            let l3 = tape.scale(l2, 0.7).unwrap();
            let loss = tape.add(l1, l3).unwrap();
            let v = tape.scalar(loss);
            if record {
                let g = tape.backward(loss).unwrap();
                (v, Some([g.get(wv), g.get(xv), g.get(cv)]))
            } else {
                (v, None)
            }
        };
        let (_, grads) = build(&w0, &x0, &c0, true);
        let [gw, gx, gc] = grads.unwrap();
        let nw = finite_diff(&w0, 1e-5, &|m| build(m, &x0, &c0, false).0);
        let nx = finite_diff(&x0, 1e-5, &|m| build(&w0, m, &c0, false).0);
        let nc = finite_diff(&c0, 1e-5, &|m| build(&w0, &x0, m, false).0);
        assert!(max_rel_err(&gw, &nw) < 1e-5, "{}", max_rel_err(&gw, &nw));
        assert!(max_rel_err(&gx, &nx) < 1e-5, "{}", max_rel_err(&gx, &nx));
        assert!(max_rel_err(&gc, &nc) < 1e-5, "{}", max_rel_err(&gc, &nc));
        for i in 0..6 {
            assert_eq!(gc.get(i, i), 0.0);
        }
    }
}
