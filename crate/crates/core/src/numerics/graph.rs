//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are appended to a [`Graph`] in execution order, so the node
//! list is already topologically sorted; [`Graph::backward`] walks it once in
//! reverse. A node records its backward rule only when one of its inputs
//! requires a gradient, so inference through the same code path costs nothing
//! extra beyond the forward values.

use crate::error::{Error, Result};

use super::recurrent::{LstmTape, SruTape};
use super::tensor::{gemm, split_axis, Element, MatRef, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-defined op: `(inputs, output, output_grad) -> input grads`.
pub type BackwardFn<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

pub(crate) enum Op<T: Element> {
    Leaf,
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale { x: Var, factor: T },
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    LogSumExp { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    Reshape(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    Sru(Box<SruTape<T>>),
    Lstm(Box<LstmTape<T>>),
    Custom { inputs: Vec<Var>, backward: BackwardFn<T> },
}

pub(crate) struct Node<T: Element> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Recorded computation. One training step owns one graph.
pub struct Graph<T: Element> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    x.sigmoid()
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, s, &[0, 0])),
        }
    }

    /// Matrix product of rank-2 tensors, each optionally transposed.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let ma = MatRef::new(self.value(a).data(), ar, ac, ta);
        let mb = MatRef::new(self.value(b).data(), br, bc, tb);
        let (m, k) = ma.dims();
        let (k2, n) = mb.dims();
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(ma, mb, T::zero(), &mut out);
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, &[a, b], Op::Matmul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn zip_same(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, &[a, b], Op::Add(a, b)))
    }

    /// Adds a bias vector to every row of a rank-2 tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "add_bias")?;
        if self.shape(bias) != [c] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let bv = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(c.max(1)).take(r) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o = *o + b;
            }
        }
        let value = Tensor::from_parts(vec![r, c], out);
        Ok(self.push(value, &[x, bias], Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, &[x], Op::Scale { x, factor })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, &[x], Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh_act());
        self.push(value, &[x], Op::Tanh(x))
    }

    fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::invalid(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    /// Softmax along `axis`. Entries equal to negative infinity get weight 0.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for l in 0..len {
                    m = m.max(src[base + l * inner]);
                }
                let mut s = T::zero();
                for l in 0..len {
                    let e = (src[base + l * inner] - m).exp();
                    out[base + l * inner] = e;
                    s = s + e;
                }
                for l in 0..len {
                    out[base + l * inner] = out[base + l * inner] / s;
                }
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push(value, &[x], Op::Softmax { x, axis }))
    }

    /// `log(sum(exp(x)))` along `axis`, computed with a max shift.
    pub fn log_sum_exp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "log_sum_exp")?;
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for l in 0..len {
                    m = m.max(src[base + l * inner]);
                }
                out[o * inner + i] = if m == T::neg_infinity() {
                    m
                } else {
                    let s: T = (0..len).map(|l| (src[base + l * inner] - m).exp()).sum();
                    m + s.ln()
                };
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, &[x], Op::LogSumExp { x, axis }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        self.check_axis(first, axis, "concat")?;
        let base_shape = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &base_shape, s));
            }
            total += s[axis];
        }
        let mut shape = base_shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(
            value,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis(x, axis, "slice")?;
        let t = self.value(x);
        if start > end || end > t.shape()[axis] {
            return Err(Error::invalid(format!(
                "slice {start}..{end} out of range for axis {axis} of {:?}",
                t.shape()
            )));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let width = (end - start) * inner;
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let from = o * len * inner + start * inner;
            out.extend_from_slice(&t.data()[from..from + width]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = end - start;
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, &[x], Op::Slice { x, axis, start }))
    }

    fn reduce(&self, x: Var, axis: Option<usize>, op: &'static str) -> Result<Tensor<T>> {
        let t = self.value(x);
        match axis {
            None => Ok(Tensor::scalar(t.data().iter().copied().sum())),
            Some(axis) => {
                self.check_axis(x, axis, op)?;
                let (outer, len, inner) = split_axis(t.shape(), axis);
                let src = t.data();
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                }
                let mut shape = t.shape().to_vec();
                shape.remove(axis);
                Ok(Tensor::from_parts(shape, out))
            }
        }
    }

    /// Sum over one axis (removing it), or over everything when `axis` is `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = self.reduce(x, axis, "sum")?;
        Ok(self.push(value, &[x], Op::Sum { x, axis }))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let count = match axis {
            None => self.value(x).len(),
            Some(a) => {
                self.check_axis(x, a, "mean")?;
                self.shape(x)[a]
            }
        };
        if count == 0 {
            return Err(Error::invalid("mean over an empty axis"));
        }
        let inv = T::one() / T::from_f64(count as f64);
        let value = self.reduce(x, axis, "mean")?.map(|v| v * inv);
        Ok(self.push(value, &[x], Op::Mean { x, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape.to_vec())?;
        Ok(self.push(value, &[x], Op::Reshape(x)))
    }

    /// Selects rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!("gather_rows: row {bad} out of range ({r})")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::from_parts(vec![rows.len(), c], out);
        Ok(self.push(
            value,
            &[x],
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Records an op with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(
            value,
            inputs,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Propagates gradients from a scalar `loss` back to every node that
    /// requires one. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let g = Tensor::from_parts(node.value.shape().to_vec(), g);
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g.into_vec());
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                if !node.requires_grad {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                Some(match g {
                    Some(g) => Tensor::from_parts(shape, g),
                    None => Tensor::zeros(&shape),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let gd = g.data();
        let mut acc = |v: Var, contribution: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contribution) {
                        *e = *e + c;
                    }
                }
                slot => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let av = self.value(a);
                let bv = self.value(b);
                let (ar, ac) = (av.shape()[0], av.shape()[1]);
                let (br, bc) = (bv.shape()[0], bv.shape()[1]);
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let gm = |t| MatRef::new(gd, m, n, t);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![T::zero(); ar * ac];
                    if !ta {
                        // dA = G op(B)^T
                        gemm(gm(false), MatRef::new(bv.data(), br, bc, !tb), T::zero(), &mut ga);
                    } else {
                        // dA = op(B) G^T
                        gemm(MatRef::new(bv.data(), br, bc, tb), gm(true), T::zero(), &mut ga);
                    }
                    acc(a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![T::zero(); br * bc];
                    if !tb {
                        // dB = op(A)^T G
                        gemm(MatRef::new(av.data(), ar, ac, !ta), gm(false), T::zero(), &mut gb);
                    } else {
                        // dB = G^T op(A)
                        gemm(gm(true), MatRef::new(av.data(), ar, ac, ta), T::zero(), &mut gb);
                    }
                    acc(b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::AddBias { x, bias } => {
                acc(*x, gd.to_vec());
                let c = self.shape(*bias)[0];
                let mut gb = vec![T::zero(); c];
                for row in gd.chunks_exact(c.max(1)) {
                    for (s, &v) in gb.iter_mut().zip(row) {
                        *s = *s + v;
                    }
                }
                acc(*bias, gb);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                acc(*b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale { x, factor } => {
                acc(*x, gd.iter().map(|&g| g * *factor).collect());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(&g, &t)| g * (T::one() - t * t)).collect());
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dotp: T = (0..len)
                            .map(|l| gd[base + l * inner] * y[base + l * inner])
                            .sum();
                        for l in 0..len {
                            let k = base + l * inner;
                            gx[k] = y[k] * (gd[k] - dotp);
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::LogSumExp { x, axis } => {
                let xv = self.value(*x);
                let src = xv.data();
                let out = node.value.data();
                let (outer, len, inner) = split_axis(xv.shape(), *axis);
                let mut gx = vec![T::zero(); src.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let lse = out[o * inner + i];
                        let go = gd[o * inner + i];
                        if lse == T::neg_infinity() {
                            continue;
                        }
                        for l in 0..len {
                            let k = o * len * inner + l * inner + i;
                            gx[k] = go * (src[k] - lse).exp();
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let total_block = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    if self.nodes[p.0].requires_grad {
                        let mut gp = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let from = o * total_block + offset;
                            gp.extend_from_slice(&gd[from..from + block]);
                        }
                        acc(p, gp);
                    }
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, len, inner) = split_axis(xs, *axis);
                let width = node.value.shape()[*axis] * inner;
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    let to = o * len * inner + start * inner;
                    gx[to..to + width].copy_from_slice(&gd[o * width..(o + 1) * width]);
                }
                acc(*x, gx);
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let xs = self.shape(*x);
                let scale = match (&node.op, axis) {
                    (Op::Mean { .. }, None) => T::one() / T::from_f64(self.value(*x).len() as f64),
                    (Op::Mean { .. }, Some(a)) => T::one() / T::from_f64(xs[*a] as f64),
                    _ => T::one(),
                };
                let gx = match axis {
                    None => vec![gd[0] * scale; self.value(*x).len()],
                    Some(a) => {
                        let (outer, len, inner) = split_axis(xs, *a);
                        let mut gx = vec![T::zero(); outer * len * inner];
                        for o in 0..outer {
                            for l in 0..len {
                                let to = (o * len + l) * inner;
                                for i in 0..inner {
                                    gx[to + i] = gd[o * inner + i] * scale;
                                }
                            }
                        }
                        gx
                    }
                };
                acc(*x, gx);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::GatherRows { x, rows } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut gx = vec![T::zero(); r * c];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] = gx[i * c + j] + gd[k * c + j];
                    }
                }
                acc(*x, gx);
            }
            Op::Sru(tape) => {
                for (v, gv) in tape.backward(self, gd) {
                    acc(v, gv);
                }
            }
            Op::Lstm(tape) => {
                for (v, gv) in tape.backward(self, node.value.data(), gd) {
                    acc(v, gv);
                }
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let input_grads = backward(&values, &node.value, g);
                if input_grads.len() != inputs.len() {
                    return Err(Error::invalid("custom backward returned wrong arity"));
                }
                for (&v, gv) in inputs.iter().zip(input_grads) {
                    if let Some(gv) = gv {
                        if gv.shape() != self.shape(v) {
                            return Err(shape_err("custom backward", gv.shape(), self.shape(v)));
                        }
                        acc(v, gv.into_vec());
                    }
                }
            }
        }
        Ok(())
    }
}
