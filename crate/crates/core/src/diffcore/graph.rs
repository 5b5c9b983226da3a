//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are registered
//! with [`Graph::param`] (differentiable) or [`Graph::constant`]; every
//! operation appends one node whose operands already exist, so the node list
//! is a topological order by construction. [`Graph::backward`] walks it once in
//! reverse.

use crate::error::DiffError;
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Abs(Var),
    AddBias(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    ColSum(Var),
    RowSum(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    /// Row-wise L2 normalisation; keeps the row norms for the backward rule.
    NormalizeRows(Var, Vec<S>),
    /// Mean cross-entropy; keeps the softmax probabilities and labels.
    SoftmaxXent(Var, Tensor<S>, Vec<usize>),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::AddBias(..) => "add_bias",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ColSum(..) => "col_sum",
            Op::RowSum(..) => "row_sum",
            Op::SelectRows(..) => "select_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::SoftmaxXent(..) => "softmax_cross_entropy",
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recorded operations of one forward pass.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw<S: Scalar>(a: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Registers a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>) -> Result<Var, DiffError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite {
                context: format!("output of {}", op.name()),
            });
        }
        let requires_grad = self.operands(&op).iter().any(|o| self.nodes[o.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn operands(&self, op: &Op<S>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::ColSum(a)
            | Op::RowSum(a)
            | Op::SelectRows(a, _)
            | Op::SliceCols(a, _, _)
            | Op::NormalizeRows(a, _)
            | Op::SoftmaxXent(a, _, _) => vec![*a],
        }
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), DiffError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(DiffError::NotMatrix { op, shape: s.to_vec() });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Var, DiffError> {
        self.same_shape(a, b, op.name())?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    fn map(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Result<Var, DiffError> {
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, DiffError> {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var, DiffError> {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.scale(a, -S::one())
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken to be 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.map(a, Op::Relu(a), |x| if x > S::zero() { x } else { S::zero() })
    }

    /// `|x|`; the derivative at exactly 0 is taken to be 0.
    pub fn abs(&mut self, a: Var) -> Result<Var, DiffError> {
        self.map(a, Op::Abs(a), S::abs)
    }

    /// Adds a bias vector (`[n]` or `[1×n]`) to every row of `x: [B×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (b, n) = self.matrix_dims(x, "add_bias")?;
        if self.value(bias).len() != n {
            return Err(DiffError::ShapeMismatch {
                op: "add_bias",
                left: vec![b, n],
                right: self.shape(bias).to_vec(),
            });
        }
        let bv = self.value(bias).data();
        let out = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(&v, &c)| v + c))
            .collect();
        self.push(vec![b, n], out, Op::AddBias(x, bias))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let out = transpose_raw(self.value(a).data(), r, c);
        self.push(vec![c, r], out, Op::Transpose(a))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<S>() / S::count(t.len());
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Column sums of a matrix, `1ᵀX`, shaped `[1×d]`.
    pub fn col_sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let (_, c) = self.matrix_dims(a, "col_sum")?;
        let mut out = vec![S::zero(); c];
        for row in self.value(a).data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        self.push(vec![1, c], out, Op::ColSum(a))
    }

    /// Row sums of a matrix, shaped `[B×1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.matrix_dims(a, "row_sum")?;
        let out = self
            .value(a)
            .data()
            .chunks(c)
            .map(|row| row.iter().copied().sum())
            .collect();
        self.push(vec![r, 1], out, Op::RowSum(a))
    }

    /// Gathers the listed rows (in order, repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let (r, c) = self.matrix_dims(a, "select_rows")?;
        if rows.is_empty() {
            return Err(DiffError::InvalidShape(vec![0, c]));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(DiffError::IndexOutOfRange {
                op: "select_rows",
                index: bad,
                bound: r,
            });
        }
        let src = self.value(a);
        let out = rows.iter().flat_map(|&i| src.row(i).iter().copied()).collect();
        self.push(vec![rows.len(), c], out, Op::SelectRows(a, rows.to_vec()))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let (r, c) = self.matrix_dims(a, "slice_cols")?;
        if start >= end || end > c {
            return Err(DiffError::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                bound: c,
            });
        }
        let out = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        self.push(vec![r, end - start], out, Op::SliceCols(a, start, end))
    }

    /// Horizontal concatenation `[a ‖ b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ra, ca) = self.matrix_dims(a, "concat_cols")?;
        let (rb, cb) = self.matrix_dims(b, "concat_cols")?;
        if ra != rb {
            return Err(DiffError::ShapeMismatch {
                op: "concat_cols",
                left: vec![ra, ca],
                right: vec![rb, cb],
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.push(vec![ra, ca + cb], out, Op::ConcatCols(a, b))
    }

    /// Divides every row by its L2 norm. Rows with norm `<= eps` are rejected.
    pub fn normalize_rows(&mut self, a: Var, eps: S) -> Result<Var, DiffError> {
        let (_, c) = self.matrix_dims(a, "normalize_rows")?;
        let mut norms = Vec::with_capacity(self.value(a).rows());
        let mut out = Vec::with_capacity(self.value(a).len());
        for (i, row) in self.value(a).data().chunks(c).enumerate() {
            let n = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            if !(n > eps) {
                return Err(DiffError::ZeroNormRow {
                    row: i,
                    eps: eps.as_f64(),
                });
            }
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::NormalizeRows(a, norms))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, stabilised by
    /// subtracting each row's maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, DiffError> {
        let (b, c) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(DiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: vec![b, c],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DiffError::LabelOutOfRange { label: bad, classes: c });
        }
        let mut probs = Vec::with_capacity(b * c);
        let mut total = S::zero();
        for (row, &y) in self.value(logits).data().chunks(c).zip(labels) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: S = exps.iter().copied().sum();
            total += z.ln() - (row[y] - m);
            probs.extend(exps.iter().map(|&e| e / z));
        }
        let loss = total / S::count(b);
        let probs = Tensor::from_parts(vec![b, c], probs);
        self.push(vec![1], vec![loss], Op::SoftmaxXent(logits, probs, labels.to_vec()))
    }

    /// Reverse pass from a scalar root. Gradients are accumulated for every
    /// node that depends on a [`Graph::param`] leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>, DiffError> {
        if root.0 >= self.nodes.len() {
            return Err(DiffError::UnknownVar(root.0));
        }
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(DiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_parts(rv.shape().to_vec(), vec![S::one()]));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }

        if let Some(i) = grads.iter().flatten().position(|g| !g.is_finite()) {
            return Err(DiffError::NonFinite {
                context: format!("gradient buffer {i}"),
            });
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, delta: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), delta));
            }
        }
    }

    fn propagate(&self, op: &Op<S>, out: &Tensor<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let bt = transpose_raw(bv, k, n);
                    self.accumulate(grads, *a, matmul_raw(gd, &bt, m, n, k));
                }
                if self.requires_grad(*b) {
                    let at = transpose_raw(av, m, k);
                    self.accumulate(grads, *b, matmul_raw(&at, gd, k, m, n));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                self.accumulate(grads, *b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, gd.iter().map(|&v| v * *s).collect());
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(av)
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let av = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(av)
                    .map(|(&g, &x)| {
                        if x > S::zero() {
                            g
                        } else if x < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, gd.to_vec());
                let n = self.value(*bias).len();
                let mut db = vec![S::zero(); n];
                for row in gd.chunks(n) {
                    for (o, &v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *bias, db);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                self.accumulate(grads, *a, transpose_raw(gd, c, r));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / S::count(n); n]);
            }
            Op::ColSum(a) => {
                let r = self.shape(*a)[0];
                let d = (0..r).flat_map(|_| gd.iter().copied()).collect();
                self.accumulate(grads, *a, d);
            }
            Op::RowSum(a) => {
                let c = self.shape(*a)[1];
                let d = gd.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, rows) => {
                let c = self.shape(*a)[1];
                let mut d = vec![S::zero(); self.value(*a).len()];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += gd[k * c + j];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start, end) => {
                let c = self.shape(*a)[1];
                let w = end - start;
                let mut d = vec![S::zero(); self.value(*a).len()];
                for (i, row) in gd.chunks(w).enumerate() {
                    d[i * c + start..i * c + end].copy_from_slice(row);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a)[1];
                let cb = self.shape(*b)[1];
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in gd.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::NormalizeRows(a, norms) => {
                // d(x/|x|) = (g - y (g·y)) / |x|
                let c = self.shape(*a)[1];
                let mut d = Vec::with_capacity(out.len());
                for ((grow, yrow), &n) in gd.chunks(c).zip(out.data().chunks(c)).zip(norms) {
                    let dot: S = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    d.extend(grow.iter().zip(yrow).map(|(&g, &y)| (g - y * dot) / n));
                }
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxXent(a, probs, labels) => {
                let c = probs.cols();
                let scale = gd[0] / S::count(labels.len());
                let mut d: Vec<S> = probs.data().to_vec();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= S::one();
                }
                d.iter_mut().for_each(|v| *v *= scale);
                self.accumulate(grads, *a, d);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, graph: &Graph<S>, v: Var) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| graph.value(v).zeros_like())
    }
}
