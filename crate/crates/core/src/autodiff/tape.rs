//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends one node holding its forward value and the ids of
//! its inputs. Inputs always precede outputs, so walking the tape backwards is
//! a reverse topological order and each node's adjoint is complete by the time
//! it is visited.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which side of the score matrix a structured hinge term anchors on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HingeSide {
    /// Anchor on row `n` (an image), compete over columns (texts).
    Rows,
    /// Anchor on column `n` (a text), compete over rows (images).
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddColumnBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        stride: usize,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    Mean(Vec<Var>),
    StackRows(Vec<Var>),
    Column(Var, usize),
    Slice(Var, usize),
    Reshape(Var),
    Lookup {
        table: Var,
        row: usize,
    },
    Sum(Var),
    Dot(Var, Var),
    Hinge {
        scores: Var,
        side: HingeSide,
        /// Winning competitor per anchor, `None` when the margin holds.
        choice: Vec<Option<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<usize>,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` participated.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter slot, gradient)` for every bound parameter that received one.
    pub fn params(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.bindings
            .iter()
            .filter_map(|&(slot, node)| self.grads[node].as_deref().map(|g| (slot, g)))
    }
}

fn shape2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Contract(format!(
            "{op} expects a matrix, got shape {s:?}"
        ))),
    }
}

fn shape1(t: &Tensor, op: &'static str) -> Result<usize> {
    match t.shape() {
        [n] => Ok(*n),
        s => Err(Error::Contract(format!(
            "{op} expects a vector, got shape {s:?}"
        ))),
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

fn sigmoid(x: f64) -> f64 {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. It is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Records a leaf bound to parameter slot `slot`; its gradient is reported
    /// by [`Gradients::params`].
    pub fn param(&mut self, slot: usize, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.clear_grad();
        let needs = t.requires_grad();
        let v = self.push(value, Op::Leaf, needs);
        self.nodes[v.0].param = Some(slot);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.value(a), "matmul")?;
        let (k2, n) = shape2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `[m×n] · [n] → [m]`
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(w), "matvec")?;
        let n2 = shape1(self.value(x), "matvec")?;
        if n != n2 {
            return Err(Error::dim("matvec", self.shape(w), self.shape(x)));
        }
        let wv = self.value(w).values();
        let xv = self.value(x).values();
        let out: Vec<f64> = (0..m)
            .map(|i| {
                wv[i * n..(i + 1) * n]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let needs = self.needs(w) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a), "transpose")?;
        let av = self.value(a).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, out).expect("shape checked"), op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x [rows×cols] + b [rows]`, broadcasting `b` along columns.
    pub fn add_column_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = shape2(self.value(x), "add_column_bias")?;
        if shape1(self.value(b), "add_column_bias")? != rows {
            return Err(Error::dim("add_column_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).values();
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i / cols])
            .collect();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::AddColumnBias(x, b),
            needs,
        ))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t.values().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, out).expect("same shape"), op, needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Valid temporal cross-correlation.
    ///
    /// `input [channels×length]`, `kernel [out×channels×width]` →
    /// `[out × ((length − width)/stride + 1)]`. Zero input entries are skipped,
    /// which makes one-hot inputs cheap.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (c, len) = shape2(self.value(input), "conv1d")?;
        let (o, kc, w) = match self.shape(kernel) {
            [o, kc, w] => (*o, *kc, *w),
            s => {
                return Err(Error::Contract(format!(
                    "conv1d expects a rank-3 kernel, got shape {s:?}"
                )))
            }
        };
        if kc != c {
            return Err(Error::dim("conv1d", self.shape(input), self.shape(kernel)));
        }
        if stride == 0 {
            return Err(Error::Contract("conv1d stride must be positive".into()));
        }
        if w > len {
            return Err(Error::Degenerate {
                op: "conv1d",
                detail: format!("kernel width {w} exceeds input length {len}"),
            });
        }
        let out_len = (len - w) / stride + 1;
        let x = self.value(input).values();
        let k = self.value(kernel).values();
        let mut out = vec![0.0; o * out_len];
        for ci in 0..c {
            for p in 0..len {
                let xv = x[ci * len + p];
                if xv == 0.0 {
                    continue;
                }
                for ki in 0..w.min(p + 1) {
                    let start = p - ki;
                    if start % stride != 0 {
                        continue;
                    }
                    let t = start / stride;
                    if t >= out_len {
                        continue;
                    }
                    for oi in 0..o {
                        out[oi * out_len + t] += k[(oi * c + ci) * w + ki] * xv;
                    }
                }
            }
        }
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            Tensor::new(vec![o, out_len], out)?,
            Op::Conv1d {
                input,
                kernel,
                stride,
            },
            needs,
        ))
    }

    /// Non-overlapping max over windows of `window` steps, per channel.
    /// A trailing partial window is dropped.
    pub fn maxpool1d(&mut self, input: Var, window: usize) -> Result<Var> {
        let (c, len) = shape2(self.value(input), "maxpool1d")?;
        if window == 0 {
            return Err(Error::Contract("maxpool1d window must be positive".into()));
        }
        if window > len {
            return Err(Error::Degenerate {
                op: "maxpool1d",
                detail: format!("window {window} exceeds input length {len}"),
            });
        }
        let out_len = len / window;
        let x = self.value(input).values();
        let mut out = Vec::with_capacity(c * out_len);
        let mut argmax = Vec::with_capacity(c * out_len);
        for ci in 0..c {
            for t in 0..out_len {
                let base = ci * len + t * window;
                let mut best = base;
                for idx in base + 1..base + window {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(vec![c, out_len], out)?,
            Op::MaxPool1d { input, argmax },
            needs,
        ))
    }

    /// Arithmetic mean of equally shaped tensors.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::EmptySequence("temporal_mean"));
        };
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::dim("temporal_mean", &shape, self.shape(x)));
            }
            acc.iter_mut()
                .zip(self.value(x).values())
                .for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / xs.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Tensor::new(shape, acc)?, Op::Mean(xs.to_vec()), needs))
    }

    /// Stacks `B` vectors of length `d` into a `[B×d]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::EmptySequence("stack_rows"));
        };
        let d = shape1(self.value(first), "stack_rows")?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if self.shape(r) != [d] {
                return Err(Error::dim("stack_rows", &[d], self.shape(r)));
            }
            out.extend_from_slice(self.value(r).values());
        }
        let needs = rows.iter().any(|&r| self.needs(r));
        Ok(self.push(
            Tensor::new(vec![rows.len(), d], out)?,
            Op::StackRows(rows.to_vec()),
            needs,
        ))
    }

    /// Column `j` of a matrix as a vector.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let (rows, cols) = shape2(self.value(x), "column")?;
        if j >= cols {
            return Err(Error::Contract(format!("column {j} out of range {cols}")));
        }
        let xv = self.value(x).values();
        let out: Vec<f64> = (0..rows).map(|r| xv[r * cols + j]).collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::Column(x, j), needs))
    }

    /// Contiguous slice `[start, start+len)` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = shape1(self.value(x), "slice")?;
        if start + len > n || len == 0 {
            return Err(Error::Contract(format!(
                "slice {start}..{} out of range {n}",
                start + len
            )));
        }
        let out = self.value(x).values()[start..start + len].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::Slice(x, start), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Row `row` of a `[V×e]` table.
    pub fn lookup(&mut self, table: Var, row: usize) -> Result<Var> {
        let (v, e) = shape2(self.value(table), "lookup")?;
        if row >= v {
            return Err(Error::Contract(format!("lookup row {row} out of range {v}")));
        }
        let out = self.value(table).values()[row * e..(row + 1) * e].to_vec();
        let needs = self.needs(table);
        Ok(self.push(Tensor::vector(out), Op::Lookup { table, row }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), needs))
    }

    /// Mean structured hinge over a square score matrix.
    ///
    /// For anchor `n` the term is `max_y max(0, Δ(yₙ, y) + S[n,y] − S[n,n])`
    /// with [`HingeSide::Rows`], or the same over `S[y,n]` with
    /// [`HingeSide::Cols`]. `Δ` is the 0-1 loss on `labels`. Ties between
    /// competitors go to the lowest index. Non-finite scores yield a NaN loss.
    pub fn structured_hinge(&mut self, scores: Var, labels: &[u32], side: HingeSide) -> Result<Var> {
        let (r, c) = shape2(self.value(scores), "structured_hinge")?;
        if r != c || r != labels.len() {
            return Err(Error::dim("structured_hinge", &[r, c], &[labels.len()]));
        }
        let b = r;
        let s = self.value(scores).values();
        let at = |n: usize, y: usize| match side {
            HingeSide::Rows => s[n * b + y],
            HingeSide::Cols => s[y * b + n],
        };
        let mut total = 0.0;
        let mut choice = Vec::with_capacity(b);
        for n in 0..b {
            let own = at(n, n);
            let mut best = 0.0;
            let mut arg = None;
            for y in 0..b {
                let delta = if labels[y] == labels[n] { 0.0 } else { 1.0 };
                let term = delta + at(n, y) - own;
                if term > best {
                    best = term;
                    arg = Some(y);
                }
            }
            // a NaN score never wins a comparison; surface it in the loss
            if !own.is_finite() || (0..b).any(|y| !at(n, y).is_finite()) {
                best = f64::NAN;
            }
            total += best;
            choice.push(arg);
        }
        let needs = self.needs(scores);
        Ok(self.push(
            Tensor::scalar(total / b as f64),
            Op::Hinge {
                scores,
                side,
                choice,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let bindings = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|slot| (slot, i)))
            .collect();
        Ok(Gradients { grads, bindings })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = shape2(self.value(*a), "").unwrap();
                let n = self.shape(*b)[1];
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                if self.needs(*a) {
                    let ga = add_into(&mut grads[a.0], m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = add_into(&mut grads[b.0], k * n);
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (m, n) = shape2(self.value(*w), "").unwrap();
                let wv = self.value(*w).values();
                let xv = self.value(*x).values();
                if self.needs(*w) {
                    let gw = add_into(&mut grads[w.0], m * n);
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for (dst, &xj) in gw[i * n..(i + 1) * n].iter_mut().zip(xv) {
                            *dst += gi * xj;
                        }
                    }
                }
                if self.needs(*x) {
                    let gx = add_into(&mut grads[x.0], n);
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for (dst, &wij) in gx.iter_mut().zip(&wv[i * n..(i + 1) * n]) {
                            *dst += gi * wij;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (m, n) = shape2(self.value(*a), "").unwrap();
                    let ga = add_into(&mut grads[a.0], m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    let ga = add_into(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if self.needs(*b) {
                    let gb = add_into(&mut grads[b.0], g.len());
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d += sign * s);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).values();
                    let ga = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).values();
                    let gb = add_into(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddColumnBias(x, b) => {
                let cols = self.shape(*x)[1];
                if self.needs(*x) {
                    let gx = add_into(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if self.needs(*b) {
                    let gb = add_into(&mut grads[b.0], len(*b));
                    for (i, s) in g.iter().enumerate() {
                        gb[i / cols] += s;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let ga = add_into(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let xv = self.value(*a).values();
                    let ga = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let yv = node.value.values();
                    let ga = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let yv = node.value.values();
                    let ga = add_into(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
            }
            Op::Conv1d {
                input,
                kernel,
                stride,
            } => {
                let (c, l) = shape2(self.value(*input), "").unwrap();
                let ks = self.shape(*kernel);
                let (o, w) = (ks[0], ks[2]);
                let out_len = node.value.shape()[1];
                let x = self.value(*input).values();
                let k = self.value(*kernel).values();
                if self.needs(*kernel) {
                    let gk = add_into(&mut grads[kernel.0], o * c * w);
                    for ci in 0..c {
                        for p in 0..l {
                            let xv = x[ci * l + p];
                            if xv == 0.0 {
                                continue;
                            }
                            for ki in 0..w.min(p + 1) {
                                let start = p - ki;
                                if start % stride != 0 || start / stride >= out_len {
                                    continue;
                                }
                                let t = start / stride;
                                for oi in 0..o {
                                    gk[(oi * c + ci) * w + ki] += g[oi * out_len + t] * xv;
                                }
                            }
                        }
                    }
                }
                if self.needs(*input) {
                    let gx = add_into(&mut grads[input.0], c * l);
                    for oi in 0..o {
                        for t in 0..out_len {
                            let go = g[oi * out_len + t];
                            if go == 0.0 {
                                continue;
                            }
                            for ci in 0..c {
                                for ki in 0..w {
                                    gx[ci * l + t * stride + ki] += k[(oi * c + ci) * w + ki] * go;
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool1d { input, argmax } => {
                if self.needs(*input) {
                    let gx = add_into(&mut grads[input.0], len(*input));
                    for (&src, s) in argmax.iter().zip(g) {
                        gx[src] += s;
                    }
                }
            }
            Op::Mean(xs) => {
                let inv = 1.0 / xs.len() as f64;
                for x in xs {
                    if self.needs(*x) {
                        let gx = add_into(&mut grads[x.0], g.len());
                        gx.iter_mut().zip(g).for_each(|(d, s)| *d += inv * s);
                    }
                }
            }
            Op::StackRows(rows) => {
                let d = node.value.shape()[1];
                for (r, x) in rows.iter().enumerate() {
                    if self.needs(*x) {
                        let gx = add_into(&mut grads[x.0], d);
                        gx.iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(dst, s)| *dst += s);
                    }
                }
            }
            Op::Column(x, j) => {
                if self.needs(*x) {
                    let cols = self.shape(*x)[1];
                    let gx = add_into(&mut grads[x.0], len(*x));
                    for (r, s) in g.iter().enumerate() {
                        gx[r * cols + j] += s;
                    }
                }
            }
            Op::Slice(x, start) => {
                if self.needs(*x) {
                    let gx = add_into(&mut grads[x.0], len(*x));
                    gx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let gx = add_into(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Lookup { table, row } => {
                if self.needs(*table) {
                    let e = g.len();
                    let gt = add_into(&mut grads[table.0], len(*table));
                    gt[row * e..(row + 1) * e]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let gx = add_into(&mut grads[x.0], len(*x));
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Dot(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).values();
                    let ga = add_into(&mut grads[a.0], bv.len());
                    ga.iter_mut().zip(bv).for_each(|(d, y)| *d += g[0] * y);
                }
                if self.needs(*b) {
                    let av = self.value(*a).values();
                    let gb = add_into(&mut grads[b.0], av.len());
                    gb.iter_mut().zip(av).for_each(|(d, x)| *d += g[0] * x);
                }
            }
            Op::Hinge {
                scores,
                side,
                choice,
            } => {
                if self.needs(*scores) {
                    let b = choice.len();
                    let w = g[0] / b as f64;
                    let gs = add_into(&mut grads[scores.0], b * b);
                    for (n, c) in choice.iter().enumerate() {
                        if let Some(y) = *c {
                            let idx = match side {
                                HingeSide::Rows => n * b + y,
                                HingeSide::Cols => y * b + n,
                            };
                            gs[idx] += w;
                            gs[n * b + n] -= w;
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
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(p).values(), &[3.0, 4.0, 5.0, 6.0]);

        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let z = tape.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let p = tape.matmul(a, z).unwrap();
        assert_eq!(tape.value(p).values(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv_zero_and_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 6]));
        let k = tape.constant(Tensor::new(vec![3, 2, 3], vec![0.7; 18]).unwrap());
        let y = tape.conv1d(x, k, 1).unwrap();
        assert!(tape.value(y).values().iter().all(|&v| v == 0.0));
        assert_eq!(tape.shape(y), &[3, 4]);

        let xs = Tensor::new(vec![1, 5], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let x = tape.constant(xs.clone());
        let k = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv1d(x, k, 1).unwrap();
        assert_eq!(tape.value(y).values(), xs.values());
    }

    #[test]
    fn conv_rejects_wide_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3]));
        assert!(matches!(tape.conv1d(x, k, 1), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn conv_strided_length() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 7], vec![1.0; 7]).unwrap());
        let k = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap());
        let y = tape.conv1d(x, k, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 3]);
        assert_eq!(tape.value(y).values(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn maxpool_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 4], vec![1.0, 5.0, 2.0, 7.0]).unwrap());
        let y = tape.maxpool1d(x, 2).unwrap();
        assert_eq!(tape.value(y).values(), &[5.0, 7.0]);

        let x = tape.constant(Tensor::new(vec![2, 6], vec![0.25; 12]).unwrap());
        let y = tape.maxpool1d(x, 3).unwrap();
        assert_eq!(tape.value(y).values(), &[0.25; 4]);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 4], vec![2.0, 2.0, 1.0, 1.0]).unwrap().with_grad());
        let y = tape.maxpool1d(x, 2).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).with_grad());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        // subgradient at zero is zero
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn temporal_mean_examples() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let m = tape.mean(&[v]).unwrap();
        assert_eq!(tape.value(m).values(), &[1.0, -2.0, 3.0]);
        let nv = tape.scale(v, -1.0);
        let m = tape.mean(&[v, nv]).unwrap();
        assert_eq!(tape.value(m).values(), &[0.0, 0.0, 0.0]);
        assert!(matches!(tape.mean(&[]), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]).with_grad());
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]).with_grad());
        let q = tape.dot(p, p).unwrap();
        let g = tape.backward(q).unwrap();
        assert_eq!(g.get(p).unwrap(), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn lstm_style_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = rand_tensor(&mut rng, &[4, 3]).with_grad();
        let x0 = rand_tensor(&mut rng, &[3]);
        let f = |w: &Tensor| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let w = tape.leaf(w.clone());
            let x = tape.constant(x0.clone());
            let h = tape.matvec(w, x).unwrap();
            let a = tape.slice(h, 0, 2).unwrap();
            let b = tape.slice(h, 2, 2).unwrap();
            let sa = tape.sigmoid(a);
            let tb = tape.tanh(b);
            let m = tape.mul(sa, tb).unwrap();
            let s = tape.sum(m);
            let g = tape.backward(s).unwrap();
            (tape.value(s).values()[0], g.get(w).map(|g| g.to_vec()))
        };
        let (_, g) = f(&w0);
        let g = g.unwrap();
        let h = 1e-5;
        for (i, &gi) in g.iter().enumerate() {
            let mut wp = w0.clone();
            wp.values_mut()[i] += h;
            let mut wm = w0.clone();
            wm.values_mut()[i] -= h;
            let fd = (f(&wp).0 - f(&wm).0) / (2.0 * h);
            assert!((fd - gi).abs() < 1e-8, "coord {i}: {fd} vs {gi}");
        }
    }
}
