//! A reverse-mode tape over dense `f64` matrices.
//!
//! Every value is a 2-D matrix (vectors are `n x 1` or `1 x n`, scalars
//! `1 x 1`). Ops are recorded in creation order and [`Tape::backward`] walks
//! them in reverse, so gradient accumulation order is fixed by graph
//! construction order.
//!
//! Only the ops needed by the LUMINA graph are provided. Each op checks
//! operand shapes and the finiteness of its output.

use ndarray::{s, Axis, Zip};

use crate::connectome::{inv_sqrt_or_zero, Matrix};
use crate::error::{LuminaError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Normalize each row (reduce over columns).
    Rows,
    /// Normalize each column (reduce over rows).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    Scale(Var, f64),
    IdentityPlus(Var, f64),
    Relu(Var),
    Abs(Var),
    Tanh(Var),
    InvSqrt(Var),
    Transpose(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var, SoftmaxAxis),
    Conv1d { x: Var, kernel: Var, dilation: usize },
    ConcatCols(Vec<Var>),
    Column(Var, usize),
    Element(Var, usize, usize),
    CrossEntropy { logits: Var, target: usize },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when disconnected.
    pub fn wrt(&self, v: Var) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(self.shapes[v.0]))
    }

    /// The subset of `vars` that received no gradient.
    pub fn disconnected(&self, vars: &[Var]) -> Vec<Var> {
        vars.iter().copied().filter(|v| self.get(*v).is_none()).collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(m: &Matrix) -> Vec<usize> {
    m.shape().to_vec()
}

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> LuminaError {
    LuminaError::ShapeMismatch {
        op,
        left: shape(a),
        right: shape(b),
    }
}

fn accumulate(slot: &mut Option<Matrix>, contribution: Matrix) {
    match slot {
        Some(g) => *g += &contribution,
        None => *slot = Some(contribution),
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

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that gradients flow to.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var> {
        let finite = match value.as_slice_memory_order() {
            Some(s) => s.iter().all(|x| x.is_finite()),
            None => value.iter().all(|x| x.is_finite()),
        };
        if !finite {
            let x = value.iter().find(|x| !x.is_finite()).expect("non-finite entry");
            return Err(LuminaError::NonFiniteInput(format!("{name} produced {x}")));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleRows(a, b)
            | Op::ScaleCols(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Conv1d { x, kernel, .. } => self.requires_grad(*x) || self.requires_grad(*kernel),
            Op::ConcatCols(vs) => vs.iter().any(|v| self.requires_grad(*v)),
            Op::Scale(a, _)
            | Op::IdentityPlus(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Tanh(a)
            | Op::InvSqrt(a)
            | Op::Transpose(a)
            | Op::RowSum(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Softmax(a, _)
            | Op::Column(a, _)
            | Op::Element(a, _, _)
            | Op::CrossEntropy { logits: a, .. } => self.requires_grad(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(mismatch("matmul", va, vb));
        }
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("add", va, vb));
        }
        let out = va + vb;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("sub", va, vb));
        }
        let out = va - vb;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("mul", va, vb));
        }
        let out = va * vb;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// `a (n x m) + row (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(mismatch("add_row", va, vr));
        }
        let out = va + vr;
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// `a[i][j] * v[i]` for `v` of shape `n x 1`.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (va, vv) = (self.value(a), self.value(v));
        if vv.ncols() != 1 || vv.nrows() != va.nrows() {
            return Err(mismatch("scale_rows", va, vv));
        }
        let out = va * vv;
        self.push(out, Op::ScaleRows(a, v), "scale_rows")
    }

    /// `a[i][j] * v[j]` for `v` of shape `1 x m`.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (va, vv) = (self.value(a), self.value(v));
        if vv.nrows() != 1 || vv.ncols() != va.ncols() {
            return Err(mismatch("scale_cols", va, vv));
        }
        let out = va * vv;
        self.push(out, Op::ScaleCols(a, v), "scale_cols")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c), "scale")
    }

    /// `I + c * a` for square `a`.
    pub fn identity_plus(&mut self, a: Var, c: f64) -> Result<Var> {
        let va = self.value(a);
        if !va.is_square() {
            return Err(mismatch("identity_plus", va, va));
        }
        let mut out = va * c;
        out.diag_mut().mapv_inplace(|x| x + 1.0);
        self.push(out, Op::IdentityPlus(a, c), "identity_plus")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a), "abs")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    /// `x^{-1/2}` elementwise, with 0 mapped to 0.
    pub fn inv_sqrt(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(x) = va.iter().find(|&&x| x < 0.0) {
            return Err(LuminaError::InvalidInput(format!("inv_sqrt of negative value {x}")));
        }
        let out = va.mapv(inv_sqrt_or_zero);
        self.push(out, Op::InvSqrt(a), "inv_sqrt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Sum of each row, shape `n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::RowSum(a), "row_sum")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = Matrix::from_elem((1, 1), va.sum() / va.len() as f64);
        self.push(out, Op::Mean(a), "mean")
    }

    /// Max-shifted softmax along the given axis.
    pub fn softmax(&mut self, a: Var, axis: SoftmaxAxis) -> Result<Var> {
        let mut out = self.value(a).clone();
        let lanes = match axis {
            SoftmaxAxis::Rows => Axis(1),
            SoftmaxAxis::Cols => Axis(0),
        };
        for mut lane in out.lanes_mut(lanes) {
            let max = lane.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            lane.mapv_inplace(|x| (x - max).exp());
            let total = lane.sum();
            lane.mapv_inplace(|x| x / total);
        }
        self.push(out, Op::Softmax(a, axis), "softmax")
    }

    /// Dilated 1-D cross-correlation of every row of `x` with the `1 x k`
    /// kernel (`k` odd), zero-padded by `dilation * (k - 1) / 2` on each side
    /// so row length is preserved.
    pub fn dilated_conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        let k = vk.ncols();
        if vk.nrows() != 1 || k % 2 == 0 || dilation == 0 {
            return Err(mismatch("dilated_conv1d", vx, vk));
        }
        let len = vx.ncols() as isize;
        let pad = (dilation * (k - 1) / 2) as isize;
        let mut out = Matrix::zeros(vx.dim());
        for (t, &w) in vk.iter().enumerate() {
            let shift = t as isize * dilation as isize - pad;
            let (lo, hi) = (0.max(-shift), len.min(len - shift));
            if lo >= hi {
                continue;
            }
            let src = vx.slice(s![.., (lo + shift)..(hi + shift)]);
            let mut dst = out.slice_mut(s![.., lo..hi]);
            dst.scaled_add(w, &src);
        }
        self.push(out, Op::Conv1d { x, kernel, dilation }, "dilated_conv1d")
    }

    /// Horizontal concatenation; all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| LuminaError::InvalidInput("concat of zero tensors".into()))?;
        let rows = self.value(*first).nrows();
        for p in parts {
            if self.value(*p).nrows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| LuminaError::InvalidInput(format!("concat_cols: {e}")))?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Column `j` as an `n x 1` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let va = self.value(a);
        if j >= va.ncols() {
            return Err(LuminaError::InvalidInput(format!(
                "column {j} of {:?}",
                va.shape()
            )));
        }
        let out = va.column(j).to_owned().insert_axis(Axis(1));
        self.push(out, Op::Column(a, j), "column")
    }

    /// Entry `(i, j)` as a scalar.
    pub fn element(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let va = self.value(a);
        let x = *va.get((i, j)).ok_or_else(|| {
            LuminaError::InvalidInput(format!("element ({i},{j}) of {:?}", va.shape()))
        })?;
        self.push(Matrix::from_elem((1, 1), x), Op::Element(a, i, j), "element")
    }

    /// `-log softmax(logits)[target]` for a `1 x c` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let vl = self.value(logits);
        if vl.nrows() != 1 || target >= vl.ncols() {
            return Err(LuminaError::InvalidInput(format!(
                "cross_entropy target {target} for logits {:?}",
                vl.shape()
            )));
        }
        let max = vl.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + vl.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let out = Matrix::from_elem((1, 1), lse - vl[[0, target]]);
        self.push(out, Op::CrossEntropy { logits, target }, "cross_entropy")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(LuminaError::InvalidInput(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // interior grads are dropped; leaves keep theirs
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.dot(&val(b).t()));
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], val(a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], -g);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g * val(b));
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], g * val(a));
                }
            }
            Op::AddRow(a, row) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if needs(row) {
                    accumulate(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::ScaleRows(a, v) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g * val(v));
                }
                if needs(v) {
                    let gv = (g * val(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads[v.0], gv);
                }
            }
            Op::ScaleCols(a, v) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g * val(v));
                }
                if needs(v) {
                    let gv = (g * val(a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[v.0], gv);
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
            Op::IdentityPlus(a, c) => accumulate(&mut grads[a.0], g * *c),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                accumulate(&mut grads[a.0], d);
            }
            Op::Abs(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(a)).for_each(|d, &x| {
                    *d *= if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                });
                accumulate(&mut grads[a.0], d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(&mut grads[a.0], d);
            }
            Op::InvSqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= -0.5 * y * y * y);
                accumulate(&mut grads[a.0], d);
            }
            Op::Transpose(a) => accumulate(&mut grads[a.0], g.t().to_owned()),
            Op::RowSum(a) => {
                let d = Matrix::from_shape_fn(val(a).dim(), |(i, _)| g[[i, 0]]);
                accumulate(&mut grads[a.0], d);
            }
            Op::Sum(a) => accumulate(&mut grads[a.0], Matrix::from_elem(val(a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let va = val(a);
                let c = g[[0, 0]] / va.len() as f64;
                accumulate(&mut grads[a.0], Matrix::from_elem(va.dim(), c));
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let gy = g * y;
                let d = match axis {
                    SoftmaxAxis::Rows => {
                        let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                        &gy - &(y * &dot)
                    }
                    SoftmaxAxis::Cols => {
                        let dot = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        &gy - &(y * &dot)
                    }
                };
                accumulate(&mut grads[a.0], d);
            }
            Op::Conv1d { x, kernel, dilation } => {
                let (vx, vk) = (val(x), val(kernel));
                let k = vk.ncols();
                let len = vx.ncols() as isize;
                let pad = (dilation * (k - 1) / 2) as isize;
                let mut gx = needs(x).then(|| Matrix::zeros(vx.dim()));
                let mut gk = needs(kernel).then(|| Matrix::zeros(vk.dim()));
                for t in 0..k {
                    let shift = t as isize * *dilation as isize - pad;
                    let (lo, hi) = (0.max(-shift), len.min(len - shift));
                    if lo >= hi {
                        continue;
                    }
                    let go = g.slice(s![.., lo..hi]);
                    if let Some(gx) = gx.as_mut() {
                        gx.slice_mut(s![.., (lo + shift)..(hi + shift)])
                            .scaled_add(vk[[0, t]], &go);
                    }
                    if let Some(gk) = gk.as_mut() {
                        let src = vx.slice(s![.., (lo + shift)..(hi + shift)]);
                        gk[[0, t]] += (&go * &src).sum();
                    }
                }
                if let Some(gx) = gx {
                    accumulate(&mut grads[x.0], gx);
                }
                if let Some(gk) = gk {
                    accumulate(&mut grads[kernel.0], gk);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = val(p).ncols();
                    if needs(p) {
                        accumulate(&mut grads[p.0], g.slice(s![.., offset..offset + w]).to_owned());
                    }
                    offset += w;
                }
            }
            Op::Column(a, j) => {
                let mut d = Matrix::zeros(val(a).dim());
                d.column_mut(*j).assign(&g.column(0));
                accumulate(&mut grads[a.0], d);
            }
            Op::Element(a, i, j) => {
                let mut d = Matrix::zeros(val(a).dim());
                d[[*i, *j]] = g[[0, 0]];
                accumulate(&mut grads[a.0], d);
            }
            Op::CrossEntropy { logits, target } => {
                let vl = val(logits);
                let max = vl.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let mut p = vl.mapv(|x| (x - max).exp());
                let total = p.sum();
                p.mapv_inplace(|x| x / total);
                p[[0, *target]] -= 1.0;
                accumulate(&mut grads[logits.0], p * g[[0, 0]]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `build` against the tape, over every entry
    /// of every input.
    fn check_op(inputs: Vec<Matrix>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let eval = |vals: &[Matrix]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.param(v.clone())).collect();
            let out = build(&mut t, &vars);
            let loss = t.sum(out).unwrap();
            (t.scalar(loss), t, vars, loss)
        };
        let (_, tape, vars, loss) = eval(&inputs);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[k]);
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += h;
                minus[k].as_slice_mut().unwrap()[idx] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                assert!((a - fd).abs() < 1e-6 * a.abs().max(1.0), "input {k} idx {idx}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn softmax_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros((1, 4)));
        let y = t.softmax(x, SoftmaxAxis::Rows).unwrap();
        assert_eq!(t.value(y), &array![[0.25, 0.25, 0.25, 0.25]]);
    }

    #[test]
    fn softmax_is_shift_stable() {
        let mut t = Tape::new();
        let x = t.constant(array![[1000.0, 1000.0], [-1000.0, 0.0]]);
        let y = t.softmax(x, SoftmaxAxis::Rows).unwrap();
        assert_eq!(t.value(y)[[0, 0]], 0.5);
        assert!(t.value(y)[[1, 1]] > 0.999);
    }

    #[test]
    fn relu_values() {
        let mut t = Tape::new();
        let x = t.constant(array![[-1.0, 0.0, 2.0]]);
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &array![[0.0, 0.0, 2.0]]);
    }

    #[test]
    fn impulse_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random((2, 8), &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let k = t.constant(array![[0.0, 1.0, 0.0]]);
        let y = t.dilated_conv1d(xv, k, 2).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn shifted_impulse_with_dilation() {
        // kernel [0, 0, 1], dilation 2 reads x[j + 2]; the last two outputs hit padding
        let x = array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]];
        let mut t = Tape::new();
        let xv = t.constant(x);
        let k = t.constant(array![[0.0, 0.0, 1.0]]);
        let y = t.dilated_conv1d(xv, k, 2).unwrap();
        assert_eq!(t.value(y), &array![[3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0, 0.0]]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros((2, 3)));
        let b = t.constant(Matrix::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, LuminaError::ShapeMismatch { .. }));
    }

    #[test]
    fn linear_loss_gradient_is_outer_product_structure() {
        // loss = sum(W x): dL/dW[i][j] = x[j]
        let mut t = Tape::new();
        let w = t.param(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let x = t.constant(array![[0.5], [-2.0]]);
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w), array![[0.5, -2.0], [0.5, -2.0], [0.5, -2.0]]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros((1, 1)));
        let y = t.tanh(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x)[[0, 0]], 1.0);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0]]);
        let b = t.param(array![[2.0, 3.0]]);
        let loss = t.scale(a, 3.0).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.disconnected(&[a, b]), vec![b]);
        assert_eq!(g.wrt(b), Matrix::zeros((1, 2)));
    }

    #[test]
    fn nan_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(array![[f64::MAX]]);
        assert!(t.scale(a, 10.0).is_err());
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = array![[0.3, -1.2]];
        let mut t = Tape::new();
        let l = t.constant(logits.clone());
        let ce = t.cross_entropy(l, 1).unwrap();
        let direct = -((-1.2f64).exp() / (0.3f64.exp() + (-1.2f64).exp())).ln();
        assert!((t.scalar(ce) - direct).abs() < 1e-12);
    }

    #[test]
    fn gradients_of_every_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random((3, 4), &mut rng);
        let b = random((4, 2), &mut rng);
        let c = random((3, 4), &mut rng);
        let row = random((1, 4), &mut rng);
        let colv = random((3, 1), &mut rng);
        check_op(vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]).unwrap());
        check_op(vec![a.clone(), c.clone()], |t, v| {
            let s = t.sub(v[0], v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            t.add(m, v[0]).unwrap()
        });
        check_op(vec![a.clone(), row.clone()], |t, v| {
            let x = t.add_row(v[0], v[1]).unwrap();
            t.tanh(x).unwrap()
        });
        check_op(vec![a.clone(), colv.clone(), row.clone()], |t, v| {
            let x = t.scale_rows(v[0], v[1]).unwrap();
            let x = t.scale_cols(x, v[2]).unwrap();
            t.mul(x, x).unwrap()
        });
        check_op(vec![a.clone()], |t, v| {
            let x = t.softmax(v[0], SoftmaxAxis::Rows).unwrap();
            let w = t.constant(Matrix::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64));
            t.mul(x, w).unwrap()
        });
        check_op(vec![a.clone()], |t, v| {
            let x = t.softmax(v[0], SoftmaxAxis::Cols).unwrap();
            let w = t.constant(Matrix::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64));
            t.mul(x, w).unwrap()
        });
        check_op(vec![a.clone()], |t, v| {
            let x = t.abs(v[0]).unwrap();
            let r = t.relu(v[0]).unwrap();
            let x = t.mul(x, r).unwrap();
            t.transpose(x).unwrap()
        });
        check_op(vec![a.mapv(|x| x.abs() + 0.1)], |t, v| {
            let d = t.row_sum(v[0]).unwrap();
            let d = t.inv_sqrt(d).unwrap();
            let x = t.scale_rows(v[0], d).unwrap();
            t.mean(x).unwrap()
        });
        let sq = random((4, 4), &mut rng);
        check_op(vec![sq], |t, v| {
            let x = t.identity_plus(v[0], -1.0).unwrap();
            t.mul(x, x).unwrap()
        });
        let sig = random((3, 9), &mut rng);
        let ker = random((1, 3), &mut rng);
        for d in [1, 2, 5] {
            check_op(vec![sig.clone(), ker.clone()], move |t, v| {
                let y = t.dilated_conv1d(v[0], v[1], d).unwrap();
                t.mul(y, y).unwrap()
            });
        }
        check_op(vec![a.clone(), c.clone()], |t, v| {
            let x = t.concat_cols(&[v[0], v[1]]).unwrap();
            let col = t.column(x, 5).unwrap();
            let e = t.element(x, 2, 1).unwrap();
            let s = t.sum(col).unwrap();
            let m = t.mul(s, e).unwrap();
            let all = t.mul(x, x).unwrap();
            let all = t.sum(all).unwrap();
            t.add(m, all).unwrap()
        });
        check_op(vec![random((1, 3), &mut rng)], |t, v| t.cross_entropy(v[0], 2).unwrap());
    }
}
