//! Define-by-run reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its value and the operands
//! it was computed from. [`Tape::backward`] sweeps the nodes in reverse and
//! applies each node's local gradient rule. Nodes are appended only after
//! their operands, so the tape is always in topological order.

use super::tensor::Tensor;
use crate::error::{NtmError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar {
        x: Var,
        s: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Sigmoid(Var),
    Tanh(Var),
    /// Used for both softplus and oneplus; the derivative is the same.
    Softplus(Var),
    Exp(Var),
    Log(Var),
    PowScalar {
        x: Var,
        p: Var,
    },
    Softmax(Var),
    CosineRows {
        rows: Var,
        key: Var,
        eps: f64,
    },
    CircularConvolve {
        w: Var,
        s: Var,
    },
    Normalize(Var),
    Outer(Var, Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Stack(Vec<Var>),
    Sum(Var),
    BinaryCrossEntropy {
        y: Var,
        target: Tensor,
        mask: Vec<bool>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities inside the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward pass: one optional gradient per tape node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient with respect to `v`, zero-filled when unreached.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NtmError::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Gradient buffer of `v`, created on first use; `None` when `v` is constant.
fn grad_slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'g mut Vec<f64>> {
    let target = &nodes[v.0];
    if !target.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; target.value.len()]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Summed binary cross-entropy (nats) over the rows flagged in `mask`.
pub fn binary_cross_entropy(y: &Tensor, target: &Tensor, mask: &[bool]) -> Result<f64> {
    same_shape("binary_cross_entropy", y, target)?;
    if mask.len() != y.rows() {
        return Err(NtmError::dim(
            "binary_cross_entropy",
            format!("mask has {} entries for {} rows", mask.len(), y.rows()),
        ));
    }
    let mut loss = 0.0;
    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for (yv, tv) in y.row(r).iter().zip(target.row(r)) {
            let yc = yv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= tv * yc.ln() + (1.0 - tv) * (1.0 - yc).ln();
        }
    }
    Ok(loss)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(n),
        }
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

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Var {
        let requires_grad = operands.iter().any(|o| self.nodes[o.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input (data, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product. Rank-1 operands act as a row vector on the left and
    /// a column vector on the right, and the matching output dimension is
    /// dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k_a, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(NtmError::dim("matmul", format!("lhs rank {}", sa.len()))),
        };
        let (k_b, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(NtmError::dim("matmul", format!("rhs rank {}", sb.len()))),
        };
        if k_a != k_b {
            return Err(NtmError::dim(
                "matmul",
                format!("inner dimensions {sa:?} x {sb:?}"),
            ));
        }
        let k = k_a;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let shape = match (a_vec, b_vec) {
            (true, true) => vec![],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        same_shape(op_name, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        Tensor::new(v.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x * s` for a single-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(NtmError::dim(
                "mul_scalar",
                format!("scalar operand has shape {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s).item();
        let v = self.map(x, |e| e * sv);
        Ok(self.push(v, Op::MulScalar { x, s }, &[x, s]))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.map(x, |e| scale * e + shift);
        self.push(v, Op::Affine { x, scale }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    /// `ln(1 + e^x)`
    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.map(x, softplus);
        self.push(v, Op::Softplus(x), &[x])
    }

    /// `1 + softplus(x)`, always greater than one.
    pub fn oneplus(&mut self, x: Var) -> Var {
        let v = self.map(x, |e| 1.0 + softplus(e));
        self.push(v, Op::Softplus(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::exp);
        self.push(v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&e| e <= 0.0) {
            return Err(NtmError::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        let v = self.map(x, f64::ln);
        Ok(self.push(v, Op::Log(x), &[x]))
    }

    /// Entrywise `x^p` for a single-element exponent `p`.
    pub fn pow_scalar(&mut self, x: Var, p: Var) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(NtmError::dim(
                "pow_scalar",
                format!("exponent has shape {:?}", self.shape(p)),
            ));
        }
        let pv = self.value(p).item();
        if self.value(x).data().iter().any(|&e| e < 0.0) {
            return Err(NtmError::Domain {
                op: "pow_scalar",
                detail: "negative base".into(),
            });
        }
        let v = self.map(x, |e| e.powf(pv));
        Ok(self.push(v, Op::PowScalar { x, p }, &[x, p]))
    }

    /// Softmax over all entries, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut data: Vec<f64> = v.data().iter().map(|&e| (e - max).exp()).collect();
        let total: f64 = data.iter().sum();
        data.iter_mut().for_each(|e| *e /= total);
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Cosine similarity of `key` against every row of `rows`:
    /// `r·k / (|r| |k| + eps)`.
    pub fn cosine_rows(&mut self, rows: Var, key: Var, eps: f64) -> Result<Var> {
        let r = self.value(rows);
        let k = self.value(key);
        if r.rank() != 2 || k.rank() != 1 || r.cols() != k.len() {
            return Err(NtmError::dim(
                "cosine_rows",
                format!("rows {:?}, key {:?}", r.shape(), k.shape()),
            ));
        }
        let knorm = k.norm_sq().sqrt();
        let out: Vec<f64> = (0..r.rows())
            .map(|i| {
                let row = r.row(i);
                let dot: f64 = row.iter().zip(k.data()).map(|(a, b)| a * b).sum();
                let rnorm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                dot / (rnorm * knorm + eps)
            })
            .collect();
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::CosineRows { rows, key, eps }, &[rows, key]))
    }

    /// Scalar cosine similarity of two equally sized vectors.
    pub fn cosine_similarity(&mut self, u: Var, v: Var, eps: f64) -> Result<Var> {
        let m = self.value(u).len();
        let as_row = self.reshape(u, vec![1, m])?;
        let sims = self.cosine_rows(as_row, v, eps)?;
        self.reshape(sims, vec![])
    }

    /// Circular convolution of `w` (length n) with `s` (odd length k), where
    /// `s[j]` is the weight for offset `j - k/2`:
    /// `out[i] = sum_j w[(i - offset_j) mod n] * s[j]`.
    pub fn circular_convolve(&mut self, w: Var, s: Var) -> Result<Var> {
        let wv = self.value(w);
        let sv = self.value(s);
        if wv.rank() != 1 || sv.rank() != 1 {
            return Err(NtmError::dim(
                "circular_convolve",
                "operands must be vectors",
            ));
        }
        let k = sv.len();
        if k.is_multiple_of(2) {
            return Err(NtmError::Config(format!(
                "shift kernel must have odd length, got {k}"
            )));
        }
        let n = wv.len() as isize;
        let half = (k / 2) as isize;
        let mut out = vec![0.0; wv.len()];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, &sj) in sv.data().iter().enumerate() {
                let src = (i as isize - (j as isize - half)).rem_euclid(n) as usize;
                *o += wv.data()[src] * sj;
            }
        }
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::CircularConvolve { w, s }, &[w, s]))
    }

    /// `x / sum(x)`
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        if total == 0.0 || !total.is_finite() {
            return Err(NtmError::Contract(format!(
                "cannot normalize a vector summing to {total}"
            )));
        }
        let v = self.map(x, |e| e / total);
        Ok(self.push(v, Op::Normalize(x), &[x]))
    }

    /// Outer product of two vectors.
    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let uv = self.value(u);
        let vv = self.value(v);
        if uv.rank() != 1 || vv.rank() != 1 {
            return Err(NtmError::dim("outer", "operands must be vectors"));
        }
        let data = uv
            .data()
            .iter()
            .flat_map(|&a| vv.data().iter().map(move |&b| a * b))
            .collect();
        let value = Tensor::matrix(uv.len(), vv.len(), data)?;
        Ok(self.push(value, Op::Outer(u, v), &[u, v]))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).rank() != 1 {
                return Err(NtmError::dim("concat", "operands must be vectors"));
            }
            data.extend_from_slice(self.value(p).data());
        }
        if data.is_empty() {
            return Err(NtmError::dim("concat", "no operands"));
        }
        let value = Tensor::vector(data);
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 || len == 0 || start + len > v.len() {
            return Err(NtmError::dim(
                "slice",
                format!("[{start}..{}] of {:?}", start + len, v.shape()),
            ));
        }
        let value = Tensor::vector(v.data()[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice { x, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let width = rows
            .first()
            .map(|&r| self.value(r).len())
            .ok_or_else(|| NtmError::dim("stack", "no rows"))?;
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != width {
                return Err(NtmError::dim(
                    "stack",
                    format!("row of shape {:?}", v.shape()),
                ));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows.len(), width, data)?;
        Ok(self.push(value, Op::Stack(rows.to_vec()), rows))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Summed binary cross-entropy (nats) between probabilities `y` and a
    /// constant target over the rows selected by `mask`. Probabilities are
    /// clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn binary_cross_entropy(&mut self, y: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        let loss = binary_cross_entropy(self.value(y), target, mask)?;
        let op = Op::BinaryCrossEntropy {
            y,
            target: target.clone(),
            mask: mask.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, &[y]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NtmError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.apply_rule(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn apply_rule(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(&self.nodes, grads, $v)
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = slot!(*a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &gij) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gij;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gb) = slot!(*b) {
                    gb.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gb) = slot!(*b) {
                    gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = slot!(*a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                }
            }
            Op::MulScalar { x, s } => {
                let sv = val(*s)[0];
                let xv = val(*x);
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d * sv);
                }
                if let Some(gs) = slot!(*s) {
                    gs[0] += g.iter().zip(xv).map(|(d, e)| d * e).sum::<f64>();
                }
            }
            Op::Affine { x, scale } => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d * scale);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = slot!(*x) {
                    for ((o, d), y) in gx.iter_mut().zip(g).zip(out) {
                        *o += d * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = slot!(*x) {
                    for ((o, d), y) in gx.iter_mut().zip(g).zip(out) {
                        *o += d * (1.0 - y * y);
                    }
                }
            }
            Op::Softplus(x) => {
                let xv = val(*x);
                if let Some(gx) = slot!(*x) {
                    for ((o, d), e) in gx.iter_mut().zip(g).zip(xv) {
                        *o += d * sigmoid(*e);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = slot!(*x) {
                    for ((o, d), y) in gx.iter_mut().zip(g).zip(out) {
                        *o += d * y;
                    }
                }
            }
            Op::Log(x) => {
                let xv = val(*x);
                if let Some(gx) = slot!(*x) {
                    for ((o, d), e) in gx.iter_mut().zip(g).zip(xv) {
                        *o += d / e;
                    }
                }
            }
            Op::PowScalar { x, p } => {
                let pv = val(*p)[0];
                let xv = val(*x);
                if let Some(gx) = slot!(*x) {
                    for (((o, d), &e), &y) in gx.iter_mut().zip(g).zip(xv).zip(out) {
                        let dydx = if e > 0.0 {
                            pv * y / e
                        } else {
                            pv * e.powf(pv - 1.0)
                        };
                        *o += d * dydx;
                    }
                }
                if let Some(gp) = slot!(*p) {
                    gp[0] += g
                        .iter()
                        .zip(xv)
                        .zip(out)
                        .filter(|((_, &e), _)| e > 0.0)
                        .map(|((d, e), y)| d * y * e.ln())
                        .sum::<f64>();
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = slot!(*x) {
                    let dot: f64 = g.iter().zip(out).map(|(d, y)| d * y).sum();
                    for ((o, d), y) in gx.iter_mut().zip(g).zip(out) {
                        *o += y * (d - dot);
                    }
                }
            }
            Op::CosineRows { rows, key, eps } => {
                let rt = &self.nodes[rows.0].value;
                let kv = val(*key);
                let width = kv.len();
                let knorm = kv.iter().map(|e| e * e).sum::<f64>().sqrt();
                let mut gk_acc = vec![0.0; width];
                let rows_need = self.nodes[rows.0].requires_grad;
                let mut gr_acc = if rows_need {
                    vec![0.0; rt.len()]
                } else {
                    Vec::new()
                };
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    let row = rt.row(i);
                    let dot: f64 = row.iter().zip(kv).map(|(a, b)| a * b).sum();
                    let rnorm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let denom = rnorm * knorm + eps;
                    let c = dot / (denom * denom);
                    // d/dk = r/D - dot/D^2 * |r| * k/|k|; likewise for r.
                    let kcoef = if knorm > 0.0 { c * rnorm / knorm } else { 0.0 };
                    let rcoef = if rnorm > 0.0 { c * knorm / rnorm } else { 0.0 };
                    for j in 0..width {
                        gk_acc[j] += gi * (row[j] / denom - kcoef * kv[j]);
                    }
                    if rows_need {
                        for j in 0..width {
                            gr_acc[i * width + j] += gi * (kv[j] / denom - rcoef * row[j]);
                        }
                    }
                }
                if let Some(gk) = slot!(*key) {
                    gk.iter_mut().zip(&gk_acc).for_each(|(o, d)| *o += d);
                }
                if let Some(gr) = slot!(*rows) {
                    gr.iter_mut().zip(&gr_acc).for_each(|(o, d)| *o += d);
                }
            }
            Op::CircularConvolve { w, s } => {
                let (wv, sv) = (val(*w), val(*s));
                let n = wv.len() as isize;
                let half = (sv.len() / 2) as isize;
                let src =
                    |i: usize, j: usize| (i as isize - (j as isize - half)).rem_euclid(n) as usize;
                if let Some(gw) = slot!(*w) {
                    for (i, &gi) in g.iter().enumerate() {
                        for (j, &sj) in sv.iter().enumerate() {
                            gw[src(i, j)] += gi * sj;
                        }
                    }
                }
                if let Some(gs) = slot!(*s) {
                    for (i, &gi) in g.iter().enumerate() {
                        for (j, o) in gs.iter_mut().enumerate() {
                            *o += gi * wv[src(i, j)];
                        }
                    }
                }
            }
            Op::Normalize(x) => {
                let total: f64 = val(*x).iter().sum();
                if let Some(gx) = slot!(*x) {
                    let dot: f64 = g.iter().zip(out).map(|(d, y)| d * y).sum();
                    for (o, d) in gx.iter_mut().zip(g) {
                        *o += (d - dot) / total;
                    }
                }
            }
            Op::Outer(u, v) => {
                let (uv, vv) = (val(*u), val(*v));
                let cols = vv.len();
                if let Some(gu) = slot!(*u) {
                    for (i, o) in gu.iter_mut().enumerate() {
                        *o += g[i * cols..(i + 1) * cols]
                            .iter()
                            .zip(vv)
                            .map(|(d, b)| d * b)
                            .sum::<f64>();
                    }
                }
                if let Some(gv) = slot!(*v) {
                    for (i, &a) in uv.iter().enumerate() {
                        for (o, d) in gv.iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                            *o += d * a;
                        }
                    }
                }
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = slot!(p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(o, d)| *o += d);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, start } => {
                if let Some(gx) = slot!(*x) {
                    gx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, d)| *o += d);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::BinaryCrossEntropy { y, target, mask } => {
                let yt = &self.nodes[y.0].value;
                let cols = yt.cols();
                if let Some(gy) = slot!(*y) {
                    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                        for c in 0..cols {
                            let idx = r * cols + c;
                            let yv = yt.data()[idx];
                            if yv <= BCE_CLAMP || yv >= 1.0 - BCE_CLAMP {
                                continue;
                            }
                            let t = target.data()[idx];
                            gy[idx] += g[0] * (yv - t) / (yv * (1.0 - yv));
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = t.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let c = t.matmul(a, ones).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
        assert_eq!(t.value(c).shape(), &[2, 1]);

        let eye = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let same = t.matmul(eye, a).unwrap();
        assert_eq!(t.value(same), t.value(a));

        let zero = t.constant(Tensor::zeros(&[2, 2]));
        let z = t.matmul(zero, a).unwrap();
        assert!(t.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(NtmError::Dimension { .. })));
    }

    #[test]
    fn elementwise_values() {
        let mut t = Tape::new();
        let zero = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(zero);
        let th = t.tanh(zero);
        let op = t.oneplus(zero);
        let sp = t.softplus(zero);
        assert_eq!(t.scalar_value(s), 0.5);
        assert_eq!(t.scalar_value(th), 0.0);
        assert!(close(t.scalar_value(op), 1.0 + 2f64.ln(), 1e-15));
        assert!(close(t.scalar_value(sp), 2f64.ln(), 1e-15));
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(NtmError::Domain { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = t.softmax(x);
        for &v in t.value(y).data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let y = t.softmax(x);
        let e = std::f64::consts::E;
        assert!(close(t.value(y).data()[0], e / (e + 1.0), 1e-15));
        assert!(close(t.value(y).data()[1], 1.0 / (e + 1.0), 1e-15));
        let x = t.constant(Tensor::vector(vec![-7.5]));
        let y = t.softmax(x);
        assert_eq!(t.value(y).data(), &[1.0]);
    }

    #[test]
    fn cosine_examples() {
        let mut t = Tape::new();
        let e1 = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let e2 = t.constant(Tensor::vector(vec![0.0, 1.0]));
        let d = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let same = t.cosine_similarity(e1, e1, 1e-8).unwrap();
        let orth = t.cosine_similarity(e1, e2, 1e-8).unwrap();
        let diag = t.cosine_similarity(d, e1, 1e-8).unwrap();
        assert!(close(t.scalar_value(same), 1.0, 1e-7));
        assert_eq!(t.scalar_value(orth), 0.0);
        assert!(close(
            t.scalar_value(diag),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-7
        ));
    }

    #[test]
    fn cosine_zero_vectors_are_guarded() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let c = t.cosine_similarity(z, z, 1e-8).unwrap();
        assert_eq!(t.scalar_value(c), 0.0);
        let g = t.backward(c).unwrap();
        assert!(g.wrt(z).is_finite());
    }

    #[test]
    fn circular_convolve_examples() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let stay = t.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let right = t.constant(Tensor::vector(vec![0.0, 0.0, 1.0]));
        let half = t.constant(Tensor::vector(vec![0.0, 0.5, 0.5]));
        let a = t.circular_convolve(w, stay).unwrap();
        let b = t.circular_convolve(w, right).unwrap();
        let c = t.circular_convolve(w, half).unwrap();
        assert_eq!(t.value(a).data(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.value(b).data(), &[0.0, 1.0, 0.0]);
        assert_eq!(t.value(c).data(), &[0.5, 0.5, 0.0]);
        // Wrap-around: offset -1 moves the first entry to the end.
        let left = t.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let d = t.circular_convolve(w, left).unwrap();
        assert_eq!(t.value(d).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn circular_convolve_rejects_even_kernel() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let s = t.constant(Tensor::vector(vec![0.5, 0.5]));
        assert!(matches!(
            t.circular_convolve(w, s),
            Err(NtmError::Config(_))
        ));
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        let g = t.backward(sq).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let s = t.sigmoid(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).item(), 0.25);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = t.constant(Tensor::scalar(5.0));
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(NtmError::Contract(_))));
    }

    #[test]
    fn backward_twice_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let s = t.softmax(x);
        let k = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let p = t.mul(s, k).unwrap();
        let l = t.sum(p);
        let g1 = t.backward(l).unwrap().wrt(x);
        let g2 = t.backward(l).unwrap().wrt(x);
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn bce_matches_closed_form() {
        let y = Tensor::matrix(2, 2, vec![0.5; 4]).unwrap();
        let target = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = binary_cross_entropy(&y, &target, &[true, true]).unwrap();
        assert!(close(loss, 4.0 * 2f64.ln(), 1e-14));
        assert_eq!(
            binary_cross_entropy(&y, &target, &[false, false]).unwrap(),
            0.0
        );
    }
}
