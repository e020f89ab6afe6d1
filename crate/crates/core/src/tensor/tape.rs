use super::{validate_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise operations accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Tanh,
    Gelu,
    Scale(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(ElementwiseOp, Var, Var),
    Unary(ElementwiseOp, Var),
    AddRow(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaskedSoftmax(Var),
    LogSumExp {
        x: Var,
        outer: usize,
        size: usize,
        inner: usize,
    },
    Sum(Var),
    Gather(Var, Vec<usize>),
    Slice {
        x: Var,
        row0: usize,
        col0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Wengert list of recorded operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep is a valid topological replay.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Contract(format!(
            "{op} expects a 2-d tensor, got shape {shape:?}"
        ))),
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
fn mm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
fn mm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, c)| *a += c),
        None => *slot = Some(contribution.to_vec()),
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `t`; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: t.data.clone(),
            requires_grad: t.requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.shape(a), "matmul")?;
        let (k2, n) = dims2(self.shape(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        mm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(a), "transpose")?;
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose(a), &[a]))
    }

    /// Applies `op` to one operand (unary ops, `Scale`) or two operands
    /// (arithmetic). Binary operands must share a shape, or one of them must
    /// hold a single element.
    pub fn elementwise(&mut self, op: ElementwiseOp, operands: &[Var]) -> Result<Var> {
        use ElementwiseOp::*;
        match (op, operands) {
            (Add | Sub | Mul | Div, [a, b]) => self.binary(op, *a, *b),
            (Exp | Log | Tanh | Gelu | Scale(_), [a]) => self.unary(op, *a),
            _ => Err(Error::Contract(format!(
                "{op:?} does not accept {} operand(s)",
                operands.len()
            ))),
        }
    }

    fn binary(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        let shape = if sa == sb || nb == 1 {
            sa.to_vec()
        } else if na == 1 {
            sb.to_vec()
        } else {
            return Err(Error::shape("elementwise", sa, sb));
        };
        let n = shape.iter().product::<usize>();
        let (xa, xb) = (self.value(a), self.value(b));
        let at = |i: usize| xa[if na == 1 { 0 } else { i }];
        let bt = |i: usize| xb[if nb == 1 { 0 } else { i }];
        if op == ElementwiseOp::Div && xb.contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let out: Vec<f64> = (0..n)
            .map(|i| match op {
                ElementwiseOp::Add => at(i) + bt(i),
                ElementwiseOp::Sub => at(i) - bt(i),
                ElementwiseOp::Mul => at(i) * bt(i),
                ElementwiseOp::Div => at(i) / bt(i),
                _ => unreachable!(),
            })
            .collect();
        Ok(self.push(shape, out, Op::Binary(op, a, b), &[a, b]))
    }

    fn unary(&mut self, op: ElementwiseOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        if op == ElementwiseOp::Log {
            if let Some(bad) = x.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let out: Vec<f64> = x
            .iter()
            .map(|&v| match op {
                ElementwiseOp::Exp => v.exp(),
                ElementwiseOp::Log => v.ln(),
                ElementwiseOp::Tanh => v.tanh(),
                ElementwiseOp::Gelu => gelu(v),
                ElementwiseOp::Scale(c) => c * v,
                _ => unreachable!(),
            })
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Unary(op, a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Div, a, b)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Tanh, a).expect("tanh is total")
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(ElementwiseOp::Gelu, a).expect("gelu is total")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(ElementwiseOp::Scale(c), a)
            .expect("scale is total")
    }

    /// Adds the vector `b[n]` to every row of `x[m,n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "add_row")?;
        if self.value(b).len() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(vec![m, n], out, Op::AddRow(x, b), &[x, b]))
    }

    /// Layer normalisation over the last axis of `x[m,n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "layer_norm")?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push(vec![m, n], out, op, &[x, gamma, beta]))
    }

    /// Row-wise softmax of `x[m,n]` where columns with `key_mask[j] == false`
    /// receive probability exactly zero.
    pub fn masked_softmax(&mut self, x: Var, key_mask: &[bool]) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "masked_softmax")?;
        if key_mask.len() != n {
            return Err(Error::shape(
                "masked_softmax",
                self.shape(x),
                &[key_mask.len()],
            ));
        }
        if !key_mask.iter().any(|&k| k) {
            return Err(Error::Contract(
                "softmax mask has no active position".into(),
            ));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if key_mask[j] {
                    orow[j] = (row[j] - max).exp();
                    total += orow[j];
                }
            }
            orow.iter_mut().for_each(|p| *p /= total);
        }
        Ok(self.push(vec![m, n], out, Op::MaskedSoftmax(x), &[x]))
    }

    /// `log Σ exp(x)` along `axis`, evaluated with max subtraction. The
    /// reduced axis is removed from the shape; a full reduction yields `[1]`.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let size = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for q in 0..inner {
                let at = |s: usize| xv[(o * size + s) * inner + q];
                let max = (0..size).map(at).fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = (0..size).map(|s| (at(s) - max).exp()).sum();
                out[o * inner + q] = max + total.ln();
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis]
            .iter()
            .chain(&shape[axis + 1..])
            .copied()
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let op = Op::LogSumExp {
            x,
            outer,
            size,
            inner,
        };
        Ok(self.push(out_shape, out, op, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `out[i] = x.flat[indices[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != indices.len() {
            return Err(Error::shape("gather", &shape, &[indices.len()]));
        }
        let xv = self.value(x);
        if let Some(bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range for {} elements",
                xv.len()
            )));
        }
        let out = indices.iter().map(|&i| xv[i]).collect();
        Ok(self.push(shape, out, Op::Gather(x, indices), &[x]))
    }

    /// Rows `row0..row0+rows` and columns `col0..col0+cols` of a 2-d tensor.
    pub fn slice(
        &mut self,
        x: Var,
        row0: usize,
        rows: usize,
        col0: usize,
        cols: usize,
    ) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "slice")?;
        if rows == 0 || cols == 0 || row0 + rows > m || col0 + cols > n {
            return Err(Error::Contract(format!(
                "slice [{row0}+{rows}, {col0}+{cols}] out of bounds for [{m}, {n}]"
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * cols);
        for i in row0..row0 + rows {
            out.extend_from_slice(&xv[i * n + col0..i * n + col0 + cols]);
        }
        Ok(self.push(vec![rows, cols], out, Op::Slice { x, row0, col0 }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (_, n) = dims2(self.shape(first), "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = dims2(self.shape(p), "concat_rows")?;
            if c != n {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, n], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (m, _) = dims2(self.shape(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.shape(p), "concat_cols")?;
            if r != m {
                return Err(Error::shape(
                    "concat_cols",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(vec![m, n], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Scales each row of `x[m,n]` to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "normalize_rows")?;
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(m);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Domain(format!(
                    "row {i} has zero or non-finite norm"
                )));
            }
            norms.push(norm);
            for j in 0..n {
                out[i * n + j] = row[j] / norm;
            }
        }
        Ok(self.push(vec![m, n], out, Op::NormalizeRows { x, norms }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape, out, Op::Reshape(x), &[x]))
    }

    /// Reverse sweep from a single-element `loss`. Previous gradients held by
    /// the tape are discarded; see [`Tape::accumulate_into`] for persisting them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    mm_nt_acc(g, self.value(*b), &mut ga, m, k, n);
                    accumulate(&mut grads[a.0], &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    mm_tn_acc(self.value(*a), g, &mut gb, m, k, n);
                    accumulate(&mut grads[b.0], &gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::Binary(op, a, b) => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                let (na, nb) = (xa.len(), xb.len());
                let at = |i: usize| xa[if na == 1 { 0 } else { i }];
                let bt = |i: usize| xb[if nb == 1 { 0 } else { i }];
                let (da, db): (Vec<f64>, Vec<f64>) = (0..g.len())
                    .map(|i| match op {
                        ElementwiseOp::Add => (g[i], g[i]),
                        ElementwiseOp::Sub => (g[i], -g[i]),
                        ElementwiseOp::Mul => (g[i] * bt(i), g[i] * at(i)),
                        ElementwiseOp::Div => {
                            let q = bt(i);
                            (g[i] / q, -g[i] * at(i) / (q * q))
                        }
                        _ => unreachable!(),
                    })
                    .unzip();
                let reduce = |d: Vec<f64>, n: usize| {
                    if n == 1 && d.len() != 1 {
                        vec![d.iter().sum()]
                    } else {
                        d
                    }
                };
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], &reduce(da, na));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], &reduce(db, nb));
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a);
                let ga: Vec<f64> = (0..g.len())
                    .map(|i| match op {
                        ElementwiseOp::Exp => g[i] * y[i],
                        ElementwiseOp::Log => g[i] / x[i],
                        ElementwiseOp::Tanh => g[i] * (1.0 - y[i] * y[i]),
                        ElementwiseOp::Gelu => g[i] * gelu_grad(x[i]),
                        ElementwiseOp::Scale(c) => g[i] * c,
                        _ => unreachable!(),
                    })
                    .collect();
                accumulate(&mut grads[a.0], &ga);
            }
            Op::AddRow(x, b) => {
                let n = self.value(*b).len();
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    accumulate(&mut grads[b.0], &gb);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = self.value(*gamma).len();
                let m = rstd.len();
                let gam = self.value(*gamma);
                if self.wants(*x) {
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let dh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[i * n + j] = rstd[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads[x.0], &gx);
                }
                if self.wants(*gamma) {
                    let mut gg = vec![0.0; n];
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    accumulate(&mut grads[gamma.0], &gg);
                }
                if self.wants(*beta) {
                    let mut gb = vec![0.0; n];
                    for gr in g.chunks(n) {
                        gb.iter_mut().zip(gr).for_each(|(a, r)| *a += r);
                    }
                    accumulate(&mut grads[beta.0], &gb);
                }
            }
            Op::MaskedSoftmax(x) => {
                let n = node.shape[1];
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::LogSumExp {
                x,
                outer,
                size,
                inner,
            } => {
                let xv = self.value(*x);
                let mut gx = vec![0.0; xv.len()];
                for o in 0..*outer {
                    for q in 0..*inner {
                        let lse = y[o * inner + q];
                        let go = g[o * inner + q];
                        for s in 0..*size {
                            let k = (o * size + s) * inner + q;
                            gx[k] = go * (xv[k] - lse).exp();
                        }
                    }
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate(&mut grads[x.0], &vec![g[0]; n]);
            }
            Op::Gather(x, indices) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (&i, gv) in indices.iter().zip(g) {
                    gx[i] += gv;
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Slice { x, row0, col0 } => {
                let n = self.shape(*x)[1];
                let (rows, cols) = (node.shape[0], node.shape[1]);
                let mut gx = vec![0.0; self.value(*x).len()];
                for i in 0..rows {
                    let dst = (row0 + i) * n + col0;
                    gx[dst..dst + cols].copy_from_slice(&g[i * cols..(i + 1) * cols]);
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let mut col = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.wants(*p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * n + col..i * n + col + w]);
                        }
                        accumulate(&mut grads[p.0], &gp);
                    }
                    col += w;
                }
            }
            Op::NormalizeRows { x, norms } => {
                let n = node.shape[1];
                let mut gx = vec![0.0; y.len()];
                for (i, norm) in norms.iter().enumerate() {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[i * n + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Reshape(x) => accumulate(&mut grads[x.0], g),
        }
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient held for `v` into `t.grad`. Leaves that did not
    /// receive gradient flow contribute nothing.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}
