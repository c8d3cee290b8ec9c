use super::{AutodiffError, Result};

/// Dense row-major tensor. Every graph node owns exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
    pub node_id: usize,
}

impl Tensor {
    fn new(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, node_id: usize) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = vec![0.0; values.len()];
        Tensor {
            shape,
            values,
            grad,
            requires_grad,
            node_id,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    Sum,
    Affine,
    Concat,
    Slice,
    GatherRows,
    StackRows,
    Pick,
    Scatter,
}

/// How the right operand of a binary op maps onto the left one.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    /// Right operand has one element.
    Scalar,
    /// Left is `[m, n]`, right has `n` elements and is reused for every row.
    Row,
}

impl Bcast {
    #[inline]
    fn index(self, i: usize, n: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Row => i % n,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize, bc: Bcast },
    Sub { a: usize, b: usize, bc: Bcast },
    Mul { a: usize, b: usize, bc: Bcast },
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Softmax { a: usize, cols: usize },
    LogSoftmax { a: usize, cols: usize },
    Sum(usize),
    Affine { a: usize, scale: f64 },
    Concat(Vec<usize>),
    Slice { a: usize, start: usize },
    GatherRows { a: usize, ids: Vec<usize>, cols: usize },
    StackRows(Vec<usize>),
    Pick { a: usize, index: usize },
    Scatter { a: usize, ids: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::Sum(_) => OpKind::Sum,
            Op::Affine { .. } => OpKind::Affine,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::StackRows(_) => OpKind::StackRows,
            Op::Pick { .. } => OpKind::Pick,
            Op::Scatter { .. } => OpKind::Scatter,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => {
                vec![*a, *b]
            }
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Exp(a) | Op::Log(a) | Op::Sum(a) => vec![*a],
            Op::Softmax { a, .. }
            | Op::LogSoftmax { a, .. }
            | Op::Affine { a, .. }
            | Op::Slice { a, .. }
            | Op::GatherRows { a, .. }
            | Op::Pick { a, .. }
            | Op::Scatter { a, .. } => vec![*a],
            Op::Concat(xs) | Op::StackRows(xs) => xs.clone(),
        }
    }
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn is_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Doubles the backward contribution of every `kind` node. Only used to
    /// prove that the gradient checker catches a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Var {
        let id = self.nodes.len();
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].tensor.requires_grad);
        self.nodes.push(Node {
            tensor: Tensor::new(shape, values, requires_grad, id),
            op,
        });
        Var(id)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].tensor.values[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs().into_iter().map(Var).collect()
    }

    /// Every node on the tape, in append order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].tensor.values.len()
    }

    // ---- leaves -------------------------------------------------------

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(AutodiffError::Shape {
                op: "leaf",
                left: shape.to_vec(),
                right: vec![values.len()],
            });
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            tensor: Tensor::new(shape.to_vec(), values, requires_grad, id),
            op: Op::Leaf,
        });
        Ok(Var(id))
    }

    pub fn param(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.leaf(&[n], values, false).expect("vector shape is consistent")
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.vector(vec![0.0; n])
    }

    // ---- linear algebra ------------------------------------------------

    /// Matrix product. A 1-D left operand is a row vector and a 1-D right
    /// operand is a column vector; the result drops the corresponding axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, a_vec) = match sa.len() {
            1 => (1, sa[0], true),
            2 => (sa[0], sa[1], false),
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        let (k2, n, b_vec) = match sb.len() {
            1 => (sb[0], 1, true),
            2 => (sb[0], sb[1], false),
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        if k != k2 || (a_vec && b_vec) {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let av = self.value(a);
        let bv = self.value(b);
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
        let shape = match (a_vec, b_vec) {
            (true, false) => vec![n],
            (false, true) => vec![m],
            _ => vec![m, n],
        };
        Ok(self.push(shape, out, Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    // ---- elementwise -----------------------------------------------------

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Bcast::Same);
        }
        let nb = self.numel(b);
        if nb == 1 {
            return Ok(Bcast::Scalar);
        }
        if sa.len() == 2 && sa[1] == nb && (sb.len() == 1 || (sb.len() == 2 && sb[0] == 1)) {
            return Ok(Bcast::Row);
        }
        Err(shape_err(op, sa, sb))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<f64>, Bcast)> {
        let bc = self.bcast(op, a, b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let nb = bv.len();
        let out = av.iter().enumerate().map(|(i, &x)| f(x, bv[bc.index(i, nb)])).collect();
        Ok((out, bc))
    }

    /// `a + b`. `b` may be a single element or, for a 2-D `a`, one row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bc) = self.binary("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add { a: a.0, b: b.0, bc }))
    }

    /// `a - b`, same broadcasting as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Sub { a: a.0, b: b.0, bc }))
    }

    /// Hadamard product, same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul { a: a.0, b: b.0, bc }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain {
                op: "log",
                detail: format!("argument {x} is not positive"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a.0)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| scale * x + shift, Op::Affine { a: a.0, scale })
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    // ---- normalisers ---------------------------------------------------

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (vals, cols) = self.normaliser_input("softmax", a)?;
        let mut out = vals;
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Softmax { a: a.0, cols }))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (vals, cols) = self.normaliser_input("log_softmax", a)?;
        let mut out = vals;
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::LogSoftmax { a: a.0, cols }))
    }

    fn normaliser_input(&self, op: &'static str, a: Var) -> Result<(Vec<f64>, usize)> {
        let shape = self.shape(a);
        let cols = *shape.last().unwrap_or(&0);
        if cols == 0 {
            return Err(shape_err(op, shape, &[]));
        }
        let vals = self.value(a);
        if !is_finite(vals) {
            return Err(AutodiffError::NonFinite { op });
        }
        Ok((vals.to_vec(), cols))
    }

    /// `softmax((logits + noise) / temperature)`. `noise` is treated as a
    /// constant, so gradients reach `logits` only.
    pub fn gumbel_softmax_sample(&mut self, logits: Var, temperature: f64, noise: &[f64]) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(AutodiffError::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let shape = self.shape(logits).to_vec();
        if noise.len() != self.numel(logits) {
            return Err(shape_err("gumbel_softmax_sample", &shape, &[noise.len()]));
        }
        let noise = self.constant(&shape, noise.to_vec())?;
        let perturbed = self.add(logits, noise)?;
        let scaled = self.scale(perturbed, 1.0 / temperature);
        self.softmax(scaled)
    }

    // ---- reductions and structure ---------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a.0))
    }

    /// Inner product of two equal-length tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("dot", self.shape(a), self.shape(b)));
        }
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Concatenates flat contents into one vector.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut out = Vec::with_capacity(xs.iter().map(|&x| self.numel(x)).sum());
        for &x in xs {
            out.extend_from_slice(self.value(x));
        }
        let n = out.len();
        self.push(vec![n], out, Op::Concat(xs.iter().map(|v| v.0).collect()))
    }

    /// Contiguous flat range `[start, start + len)` as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.numel(a);
        if start + len > n {
            return Err(AutodiffError::Index {
                op: "slice",
                index: start + len,
                len: n,
            });
        }
        let out = self.value(a)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice { a: a.0, start }))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("row", &shape, &[]));
        }
        if i >= shape[0] {
            return Err(AutodiffError::Index {
                op: "row",
                index: i,
                len: shape[0],
            });
        }
        self.slice(a, i * shape[1], shape[1])
    }

    /// Embedding lookup: rows `ids` of a matrix, stacked into `[ids.len(), cols]`.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("gather_rows", &shape, &[ids.len()]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Index {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&av[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::GatherRows {
                a: a.0,
                ids: ids.to_vec(),
                cols,
            },
        ))
    }

    /// Stacks equal-length vectors into a `[rows, cols]` matrix.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(shape_err("stack_rows", &[0], &[]));
        };
        let cols = self.numel(first);
        let mut out = Vec::with_capacity(xs.len() * cols);
        for &x in xs {
            if self.numel(x) != cols {
                return Err(shape_err("stack_rows", &[cols], self.shape(x)));
            }
            out.extend_from_slice(self.value(x));
        }
        Ok(self.push(vec![xs.len(), cols], out, Op::StackRows(xs.iter().map(|v| v.0).collect())))
    }

    /// Single element as a one-element tensor.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.numel(a);
        if index >= n {
            return Err(AutodiffError::Index { op: "pick", index, len: n });
        }
        let x = self.value(a)[index];
        Ok(self.push(vec![1], vec![x], Op::Pick { a: a.0, index }))
    }

    /// Scatter-adds element `j` of `a` into slot `ids[j]` of a zero vector of length `size`.
    pub fn scatter(&mut self, a: Var, ids: &[usize], size: usize) -> Result<Var> {
        let n = self.numel(a);
        if ids.len() != n {
            return Err(shape_err("scatter", self.shape(a), &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= size) {
            return Err(AutodiffError::Index {
                op: "scatter",
                index: bad,
                len: size,
            });
        }
        let mut out = vec![0.0; size];
        for (&x, &i) in self.value(a).iter().zip(ids) {
            out[i] += x;
        }
        Ok(self.push(vec![size], out, Op::Scatter { a: a.0, ids: ids.to_vec() }))
    }

    // ---- gradients -----------------------------------------------------

    /// Zeroes every gradient on the tape.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across
    /// calls; interior gradients are recomputed from scratch each time.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root).to_vec();
        if self.numel(root) != 1 {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        for node in &mut self.nodes[..=root.0] {
            if !matches!(node.op, Op::Leaf) {
                node.tensor.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        self.nodes[root.0].tensor.grad[0] += 1.0;
        let fault = self.fault;
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.tensor.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            if node.tensor.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let factor = if fault == Some(node.op.kind()) { 2.0 } else { 1.0 };
            backprop(before, node, factor);
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

/// Values of node `read` alongside the gradient buffer of node `write`.
fn read_write(nodes: &mut [Node], read: usize, write: usize) -> (std::borrow::Cow<'_, [f64]>, &mut [f64]) {
    use std::borrow::Cow;
    if read == write {
        let t = &mut nodes[write].tensor;
        return (Cow::Owned(t.values.clone()), &mut t.grad);
    }
    if read < write {
        let (lo, hi) = nodes.split_at_mut(write);
        (Cow::Borrowed(&lo[read].tensor.values), &mut hi[0].tensor.grad)
    } else {
        let (lo, hi) = nodes.split_at_mut(read);
        (Cow::Borrowed(&hi[0].tensor.values), &mut lo[write].tensor.grad)
    }
}

/// Accumulates the contribution of `node` into the gradients of its inputs.
fn backprop(before: &mut [Node], node: &Node, factor: f64) {
    let dy: Vec<f64>;
    let dy: &[f64] = if factor == 1.0 {
        &node.tensor.grad
    } else {
        dy = node.tensor.grad.iter().map(|g| g * factor).collect();
        &dy
    };
    let y = &node.tensor.values;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if before[*a].tensor.requires_grad {
                // dA = dC · Bᵀ
                let (bv, ga) = read_write(before, *b, *a);
                for i in 0..m {
                    let drow = &dy[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] += drow.iter().zip(brow).map(|(d, b)| d * b).sum::<f64>();
                    }
                }
            }
            if before[*b].tensor.requires_grad {
                // dB = Aᵀ · dC
                let (av, gb) = read_write(before, *a, *b);
                for i in 0..m {
                    let drow = &dy[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = av[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (g, d) in gb[p * n..(p + 1) * n].iter_mut().zip(drow) {
                            *g += x * d;
                        }
                    }
                }
            }
        }
        Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
            let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
            if before[*a].tensor.requires_grad {
                for (g, d) in before[*a].tensor.grad.iter_mut().zip(dy) {
                    *g += d;
                }
            }
            if before[*b].tensor.requires_grad {
                let gb = &mut before[*b].tensor.grad;
                let nb = gb.len();
                for (i, d) in dy.iter().enumerate() {
                    gb[bc.index(i, nb)] += sign * d;
                }
            }
        }
        Op::Mul { a, b, bc } => {
            let (a, b, bc) = (*a, *b, *bc);
            let nb = before[b].tensor.values.len();
            if before[a].tensor.requires_grad {
                let (bv, ga) = read_write(before, b, a);
                for (i, (g, d)) in ga.iter_mut().zip(dy).enumerate() {
                    *g += d * bv[bc.index(i, nb)];
                }
            }
            if before[b].tensor.requires_grad {
                let (av, gb) = read_write(before, a, b);
                for (i, d) in dy.iter().enumerate() {
                    gb[bc.index(i, nb)] += d * av[i];
                }
            }
        }
        Op::Tanh(a) => {
            for ((g, d), y) in before[*a].tensor.grad.iter_mut().zip(dy).zip(y) {
                *g += d * (1.0 - y * y);
            }
        }
        Op::Sigmoid(a) => {
            for ((g, d), y) in before[*a].tensor.grad.iter_mut().zip(dy).zip(y) {
                *g += d * y * (1.0 - y);
            }
        }
        Op::Exp(a) => {
            for ((g, d), y) in before[*a].tensor.grad.iter_mut().zip(dy).zip(y) {
                *g += d * y;
            }
        }
        Op::Log(a) => {
            let t = &mut before[*a].tensor;
            for ((g, d), x) in t.grad.iter_mut().zip(dy).zip(&t.values) {
                *g += d / x;
            }
        }
        Op::Softmax { a, cols } => {
            let ga = &mut before[*a].tensor.grad;
            for ((gr, dr), yr) in ga.chunks_mut(*cols).zip(dy.chunks(*cols)).zip(y.chunks(*cols)) {
                let s: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                    *g += y * (d - s);
                }
            }
        }
        Op::LogSoftmax { a, cols } => {
            let ga = &mut before[*a].tensor.grad;
            for ((gr, dr), yr) in ga.chunks_mut(*cols).zip(dy.chunks(*cols)).zip(y.chunks(*cols)) {
                let s: f64 = dr.iter().sum();
                for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                    *g += d - y.exp() * s;
                }
            }
        }
        Op::Sum(a) => {
            let d = dy[0];
            before[*a].tensor.grad.iter_mut().for_each(|g| *g += d);
        }
        Op::Affine { a, scale } => {
            for (g, d) in before[*a].tensor.grad.iter_mut().zip(dy) {
                *g += scale * d;
            }
        }
        Op::Concat(xs) => {
            let mut off = 0;
            for &x in xs {
                let t = &mut before[x].tensor;
                let n = t.grad.len();
                if t.requires_grad {
                    for (g, d) in t.grad.iter_mut().zip(&dy[off..off + n]) {
                        *g += d;
                    }
                }
                off += n;
            }
        }
        Op::StackRows(xs) => {
            let cols = dy.len() / xs.len();
            for (r, &x) in xs.iter().enumerate() {
                let t = &mut before[x].tensor;
                if t.requires_grad {
                    for (g, d) in t.grad.iter_mut().zip(&dy[r * cols..(r + 1) * cols]) {
                        *g += d;
                    }
                }
            }
        }
        Op::Slice { a, start } => {
            let ga = &mut before[*a].tensor.grad[*start..*start + dy.len()];
            for (g, d) in ga.iter_mut().zip(dy) {
                *g += d;
            }
        }
        Op::GatherRows { a, ids, cols } => {
            let ga = &mut before[*a].tensor.grad;
            for (r, &i) in ids.iter().enumerate() {
                for (g, d) in ga[i * cols..(i + 1) * cols].iter_mut().zip(&dy[r * cols..(r + 1) * cols]) {
                    *g += d;
                }
            }
        }
        Op::Pick { a, index } => {
            before[*a].tensor.grad[*index] += dy[0];
        }
        Op::Scatter { a, ids } => {
            for (g, &i) in before[*a].tensor.grad.iter_mut().zip(ids) {
                *g += dy[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let i = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ai = g.matmul(a, i).unwrap();
        assert_eq!(g.value(ai), &[1.0, 2.0, 3.0, 4.0]);

        let z = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let zb = g.matmul(z, b).unwrap();
        assert_eq!(g.shape(zb), &[2, 2]);
        assert_eq!(g.value(zb), &[0.0; 4]);

        let b = g.constant(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        match g.matmul(a, b) {
            Err(AutodiffError::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_vector_operands() {
        let mut g = Graph::new();
        let w = g.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = g.vector(vec![1.0, 1.0]);
        let xw = g.matmul(x, w).unwrap();
        assert_eq!(g.shape(xw), &[3]);
        assert_eq!(g.value(xw), &[5.0, 7.0, 9.0]);
        let y = g.vector(vec![1.0, 0.0, 1.0]);
        let wy = g.matmul(w, y).unwrap();
        assert_eq!(g.value(wy), &[4.0, 10.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let z = g.vector(vec![0.0]);
        let t = g.tanh(z);
        let s = g.sigmoid(z);
        assert_eq!(g.value(t), &[0.0]);
        assert_eq!(g.value(s), &[0.5]);
        let x = g.vector(vec![1.5, -2.0]);
        let zero = g.zeros(2);
        let y = g.add(x, zero).unwrap();
        assert_eq!(g.value(y), &[1.5, -2.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.vector(vec![1.0, 0.0]);
        assert!(matches!(g.log(x), Err(AutodiffError::Domain { .. })));
        let x = g.vector(vec![-1.0]);
        assert!(g.log(x).is_err());
    }

    #[test]
    fn row_broadcast_add_and_reduce() {
        let mut g = Graph::new();
        let m = g.param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.param(&[2], vec![10.0, 20.0]).unwrap();
        let y = g.add(m, b).unwrap();
        assert_eq!(g.value(y), &[11.0, 22.0, 13.0, 24.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b), &[2.0, 2.0]);
        assert_eq!(g.grad(m), &[1.0; 4]);
    }

    #[test]
    fn incompatible_binary_shapes_error() {
        let mut g = Graph::new();
        let a = g.vector(vec![1.0, 2.0, 3.0]);
        let b = g.vector(vec![1.0, 2.0]);
        assert!(matches!(g.add(a, b), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let c = g.vector(vec![2.5, 2.5, 2.5]);
        let s = g.softmax(c).unwrap();
        assert!(close(g.value(s), &[1.0 / 3.0; 3], 1e-12));

        let x = g.vector(vec![0.0, 3f64.ln()]);
        let s = g.softmax(x).unwrap();
        assert!(close(g.value(s), &[0.25, 0.75], 1e-12));

        let x = g.vector(vec![0.3, -1.2, 2.0]);
        let x5 = g.affine(x, 1.0, 5.0);
        let a = g.softmax(x).unwrap();
        let b = g.softmax(x5).unwrap();
        assert!(close(g.value(a), g.value(b), 1e-12));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut g = Graph::new();
        let x = g.vector(vec![0.0, f64::NAN]);
        assert!(matches!(g.softmax(x), Err(AutodiffError::NonFinite { .. })));
        let x = g.vector(vec![f64::INFINITY, 0.0]);
        assert!(g.softmax(x).is_err());
    }

    #[test]
    fn gumbel_softmax_examples() {
        let mut g = Graph::new();
        let l = g.vector(vec![0.7, 0.7, 0.7, 0.7]);
        let s = g.gumbel_softmax_sample(l, 1.0, &[0.0; 4]).unwrap();
        assert!(close(g.value(s), &[0.25; 4], 1e-12));

        let l = g.vector(vec![0.0, 1.0]);
        let s = g.gumbel_softmax_sample(l, 0.01, &[0.0; 2]).unwrap();
        assert!(g.value(s)[1] >= 0.99);

        // (0.5 + 0.1) / 0.1 = 6, (-0.5 + 0.3) / 0.1 = -2
        let l = g.vector(vec![0.5, -0.5]);
        let s = g.gumbel_softmax_sample(l, 0.1, &[0.1, 0.3]).unwrap();
        let z = 6f64.exp() + (-2f64).exp();
        assert!(close(g.value(s), &[6f64.exp() / z, (-2f64).exp() / z], 1e-12));

        assert!(matches!(
            g.gumbel_softmax_sample(l, 0.0, &[0.0; 2]),
            Err(AutodiffError::Parameter(_))
        ));
        assert!(g.gumbel_softmax_sample(l, -1.0, &[0.0; 2]).is_err());
    }

    #[test]
    fn gumbel_gradient_reaches_logits_only() {
        let mut g = Graph::new();
        let l = g.param(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let s = g.gumbel_softmax_sample(l, 0.5, &[0.4, -0.1, 0.2]).unwrap();
        let p = g.pick(s, 0).unwrap();
        g.backward(p).unwrap();
        assert!(g.grad(l).iter().any(|&x| x != 0.0));
        let noise_node = g.inputs(g.inputs(g.inputs(s)[0])[0])[1];
        assert!(!g.tensor(noise_node).requires_grad);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let unused = g.param(&[2], vec![3.0, 4.0]).unwrap();
        let sq = g.mul(x, x).unwrap();
        let root = g.sum(sq);
        g.backward(root).unwrap();
        assert_eq!(g.grad(x), &[2.0, -4.0, 1.0]);
        assert_eq!(g.grad(unused), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn repeated_backward_after_zero_grad_is_identical() {
        let mut g = Graph::new();
        let w = g.param(&[2, 2], vec![0.3, -0.1, 0.7, 0.2]).unwrap();
        let x = g.vector(vec![0.5, -1.5]);
        let h = g.matmul(w, x).unwrap();
        let t = g.tanh(h);
        let root = g.sum(t);
        g.backward(root).unwrap();
        let first = g.grad(w).to_vec();
        g.zero_grad();
        assert!(g.grad(w).iter().all(|&v| v == 0.0));
        g.backward(root).unwrap();
        assert_eq!(g.grad(w), first.as_slice());
    }

    #[test]
    fn scatter_and_gather() {
        let mut g = Graph::new();
        let a = g.param(&[3], vec![0.2, 0.3, 0.5]).unwrap();
        let s = g.scatter(a, &[4, 1, 4], 5).unwrap();
        assert!(close(g.value(s), &[0.0, 0.3, 0.0, 0.0, 0.7], 1e-15));
        let w = g.vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let d = g.dot(s, w).unwrap();
        g.backward(d).unwrap();
        assert_eq!(g.grad(a), &[5.0, 2.0, 5.0]);

        let mut g = Graph::new();
        let e = g.param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = g.gather_rows(e, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(r), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(r);
        g.backward(s).unwrap();
        assert_eq!(g.grad(e), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.gather_rows(e, &[3]).is_err());
    }
}
