use super::cost::OpCounter;
use super::kernels::{self, gemm, Layout};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Mul,
    Silu,
    Softplus,
    Exp,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    MaxIndex,
}

/// Vector-Jacobian product for an operation whose forward was computed
/// outside the graph's primitive set.
pub(crate) trait CustomOp: std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// Gradient for each input, `None` where an input has no gradient path.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f32],
    ) -> Vec<Option<Vec<f32>>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Neg(Var),
    Exp(Var),
    Silu(Var),
    Softplus(Var),
    Gelu(Var),
    Scale(Var, f32),
    Reduce {
        a: Var,
        mean: bool,
        outer: usize,
        extent: usize,
        inner: usize,
    },
    Reshape(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    GatherRows {
        a: Var,
        index: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f32>,
        labels: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Silu(_) => "silu",
            Op::Softplus(_) => "softplus",
            Op::Gelu(_) => "gelu",
            Op::Scale(..) => "scale",
            Op::Reduce { .. } => "reduce",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

/// How the second operand of a binary op maps onto the first.
#[derive(Debug, Clone)]
enum Broadcast {
    Same,
    /// Flat index into the broadcast operand for each output element.
    Map(Vec<usize>),
}

impl Broadcast {
    fn plan(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        if b.len() > a.len() {
            return Err(Error::dim("broadcast", format!("{b:?} onto {a:?}")));
        }
        let offset = a.len() - b.len();
        for (i, &eb) in b.iter().enumerate() {
            let ea = a[offset + i];
            if eb != ea && eb != 1 {
                return Err(Error::dim("broadcast", format!("{b:?} onto {a:?}")));
            }
        }
        // strides of b expressed against a's index space (0 where broadcast)
        let mut strides = vec![0usize; a.len()];
        let mut s = 1;
        for i in (0..b.len()).rev() {
            if b[i] != 1 {
                strides[offset + i] = s;
            }
            s *= b[i];
        }
        let total = numel(a);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; a.len()];
        for _ in 0..total {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for d in (0..a.len()).rev() {
                idx[d] += 1;
                if idx[d] < a[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Broadcast::Map(map))
    }

    fn get(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Map(m) => m[i],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order of the
/// computation. `backward` walks them once in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    counter: OpCounter,
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            counter: OpCounter::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counter(&self) -> &OpCounter {
        &self.counter
    }

    pub fn counter_mut(&mut self) -> &mut OpCounter {
        &mut self.counter
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Op name of a node, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// First node (in recording order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(Var, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (Var(i), n.op.name()))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.counter.record(op.name(), value.shape());
        self.counter.retain(4 * value.numel() as u64);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf. It participates in differentiation iff
    /// its `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, k2, n) = match (sa, sb) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => {
                return Err(Error::dim(
                    "matmul",
                    format!("expected rank-2 operands, got {sa:?} and {sb:?}"),
                ))
            }
        };
        if k != k2 {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::N,
            self.value(b).data(),
            Layout::N,
            0.0,
            &mut out,
        );
        self.counter.add_macs((m * k * n) as u64);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// Pointwise op. Binary ops broadcast `b` onto the shape of `a`.
    pub fn elementwise(&mut self, op: ElemOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op, b) {
            (ElemOp::Add | ElemOp::Mul, Some(b)) => self.binary(op, a, b),
            (ElemOp::Add | ElemOp::Mul, None) => Err(Error::contract(
                "elementwise",
                format!("{op:?} needs two operands"),
            )),
            (_, Some(_)) => Err(Error::contract(
                "elementwise",
                format!("{op:?} takes one operand"),
            )),
            (ElemOp::Silu, None) => Ok(self.unary(a, kernels::silu, Op::Silu(a))),
            (ElemOp::Softplus, None) => Ok(self.unary(a, kernels::softplus, Op::Softplus(a))),
            (ElemOp::Exp, None) => Ok(self.unary(a, f32::exp, Op::Exp(a))),
            (ElemOp::Neg, None) => Ok(self.unary(a, |x| -x, Op::Neg(a))),
        }
    }

    fn binary(&mut self, op: ElemOp, a: Var, b: Var) -> Result<Var> {
        let plan = Broadcast::plan(self.shape(a), self.shape(b)).map_err(|_| {
            Error::dim(
                "elementwise",
                format!("cannot broadcast {:?} onto {:?}", self.shape(b), self.shape(a)),
            )
        })?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f32> = match op {
            ElemOp::Add => va.iter().enumerate().map(|(i, x)| x + vb[plan.get(i)]).collect(),
            _ => va.iter().enumerate().map(|(i, x)| x * vb[plan.get(i)]).collect(),
        };
        if op == ElemOp::Mul {
            self.counter.add_macs(data.len() as u64);
        }
        let t = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(&[a, b]);
        let node = if op == ElemOp::Add {
            Op::Add(a, b, plan)
        } else {
            Op::Mul(a, b, plan)
        };
        Ok(self.push(t, node, needs))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape(), src.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved");
        let needs = self.needs(&[a]);
        self.push(t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElemOp::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElemOp::Mul, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f32::exp, Op::Exp(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::silu, Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, kernels::softplus, Op::Softplus(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::gelu, Op::Gelu(a))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Reduces along `axis`, removing it from the shape. `MaxIndex` yields the
    /// (first) argmax as `f32` values and is not differentiable.
    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "reduce",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let src = self.value(a).data();
        let mut out = vec![0.0f32; outer * inner];
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                for o in 0..outer {
                    for e in 0..extent {
                        let row = &src[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                        for (acc, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    let inv = 1.0 / extent as f32;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            ReduceOp::MaxIndex => {
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut best_v = f32::NEG_INFINITY;
                        for e in 0..extent {
                            let v = src[(o * extent + e) * inner + i];
                            if v > best_v {
                                best_v = v;
                                best = e;
                            }
                        }
                        out[o * inner + i] = best as f32;
                    }
                }
            }
        }
        let t = Tensor::new(&out_shape, out)?;
        if op == ReduceOp::MaxIndex {
            return Ok(self.push(t, Op::Leaf, false));
        }
        let needs = self.needs(&[a]);
        Ok(self.push(
            t,
            Op::Reduce {
                a,
                mean: op == ReduceOp::Mean,
                outer,
                extent,
                inner,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, axis)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n]).expect("flatten");
        self.sum(flat, 0).expect("axis 0 exists")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n]).expect("flatten");
        self.mean(flat, 0).expect("axis 0 exists")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let mut t = src.reshape(shape)?;
        t.zero_grad();
        let needs = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let needs = self.needs(&[a]);
        Ok(self.push(t, Op::Transpose(a), needs))
    }

    /// Concatenates along axis 0. All parts must agree on trailing extents.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows", "no operands"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim(
                    "concat_rows",
                    format!("{s:?} does not match trailing extents {tail:?}"),
                ));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let needs = self.needs(parts);
        Ok(self.push(Tensor::new(&shape, data)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || len == 0 || start + len > s[0] {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} of {s:?}", start + len),
            ));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(a).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::SliceRows { a, start }, needs))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if len == 0 || start + len > c {
            return Err(Error::dim(
                "slice_cols",
                format!("cols {start}..{} of [{r}, {c}]", start + len),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new(&[r, len], data)?, Op::SliceCols { a, start }, needs))
    }

    /// Selects rows along axis 0 by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || index.is_empty() {
            return Err(Error::dim("gather_rows", format!("{s:?}")));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= s[0]) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} out of range for {s:?}"),
            ));
        }
        let inner: usize = s[1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len() * inner);
        for &i in index {
            data.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut shape = s.clone();
        shape[0] = index.len();
        let needs = self.needs(&[a]);
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::GatherRows {
                a,
                index: index.to_vec(),
            },
            needs,
        ))
    }

    /// Mean softmax cross-entropy of `logits[batch, classes]` against labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::dim(
                "cross_entropy",
                format!("{b} rows but {} labels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::contract(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0f32; b * c];
        let mut loss = 0.0f64;
        for i in 0..b {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for (p, &x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            probs[i * c..(i + 1) * c].iter_mut().for_each(|p| *p /= z);
            loss += (z.ln() + max - row[labels[i]]) as f64;
        }
        let t = Tensor::scalar((loss / b as f64) as f32);
        let needs = self.needs(&[logits]);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    /// Records an op whose forward was computed by the caller.
    pub(crate) fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Var {
        let needs = self.needs(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            needs,
        )
    }

    /// Back-propagates from a scalar, adding d(loss)/d(leaf) into the
    /// gradient slot of every leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut adj: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], adj: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = node.value.shape()[1];
                if wants(*a) {
                    let da = slot(adj, *a, m * k);
                    gemm(m, n, k, g, Layout::N, val(*b), Layout::T, 1.0, da);
                }
                if wants(*b) {
                    let db = slot(adj, *b, k * n);
                    gemm(k, m, n, val(*a), Layout::T, g, Layout::N, 1.0, db);
                }
            }
            Op::Add(a, b, plan) => {
                if wants(*a) {
                    add_into(slot(adj, *a, g.len()), g);
                }
                if wants(*b) {
                    let db = slot(adj, *b, self.nodes[b.0].value.numel());
                    for (j, gj) in g.iter().enumerate() {
                        db[plan.get(j)] += gj;
                    }
                }
            }
            Op::Mul(a, b, plan) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    let da = slot(adj, *a, g.len());
                    for (j, gj) in g.iter().enumerate() {
                        da[j] += gj * vb[plan.get(j)];
                    }
                }
                if wants(*b) {
                    let db = slot(adj, *b, vb.len());
                    for (j, gj) in g.iter().enumerate() {
                        db[plan.get(j)] += gj * va[j];
                    }
                }
            }
            Op::Neg(a) => pointwise(adj, *a, g, val(*a), |_, gj| -gj),
            Op::Exp(a) => {
                let y = node.value.data();
                let da = slot(adj, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * y[j];
                }
            }
            Op::Silu(a) => pointwise(adj, *a, g, val(*a), |x, gj| gj * kernels::silu_grad(x)),
            Op::Softplus(a) => pointwise(adj, *a, g, val(*a), |x, gj| gj * kernels::sigmoid(x)),
            Op::Gelu(a) => pointwise(adj, *a, g, val(*a), |x, gj| gj * kernels::gelu_grad(x)),
            Op::Scale(a, s) => pointwise(adj, *a, g, val(*a), |_, gj| gj * s),
            Op::Reduce {
                a,
                mean,
                outer,
                extent,
                inner,
            } => {
                let f = if *mean { 1.0 / *extent as f32 } else { 1.0 };
                let da = slot(adj, *a, outer * extent * inner);
                for o in 0..*outer {
                    for e in 0..*extent {
                        let dst = &mut da[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                        for (d, gj) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += gj * f;
                        }
                    }
                }
            }
            Op::Reshape(a) => add_into(slot(adj, *a, g.len()), g),
            Op::Transpose(a) => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let da = slot(adj, *a, r * c);
                for x in 0..r {
                    for y in 0..c {
                        da[x * c + y] += g[y * r + x];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.numel();
                    if wants(*p) {
                        add_into(slot(adj, *p, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceRows { a, start } => {
                let src = &self.nodes[a.0].value;
                let inner: usize = src.shape()[1..].iter().product();
                let da = slot(adj, *a, src.numel());
                add_into(&mut da[start * inner..start * inner + g.len()], g);
            }
            Op::SliceCols { a, start } => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let len = node.value.shape()[1];
                let da = slot(adj, *a, r * c);
                for x in 0..r {
                    add_into(
                        &mut da[x * c + start..x * c + start + len],
                        &g[x * len..(x + 1) * len],
                    );
                }
            }
            Op::GatherRows { a, index } => {
                let src = &self.nodes[a.0].value;
                let inner: usize = src.shape()[1..].iter().product();
                let da = slot(adj, *a, src.numel());
                for (k, &row) in index.iter().enumerate() {
                    add_into(
                        &mut da[row * inner..(row + 1) * inner],
                        &g[k * inner..(k + 1) * inner],
                    );
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f32;
                let dl = slot(adj, *logits, probs.len());
                for r in 0..b {
                    for j in 0..c {
                        let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                        dl[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let grads = op.backward(&ins, &node.value, g);
                for (v, gv) in inputs.iter().zip(grads) {
                    if let Some(gv) = gv {
                        if wants(*v) {
                            add_into(slot(adj, *v, gv.len()), &gv);
                        }
                    }
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut [f32] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn pointwise(
    adj: &mut [Option<Vec<f32>>],
    a: Var,
    g: &[f32],
    x: &[f32],
    f: impl Fn(f32, f32) -> f32,
) {
    let da = slot(adj, a, g.len());
    for j in 0..g.len() {
        da[j] += f(x[j], g[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let eye = g.leaf(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let b = g.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let y = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(b).data());

        let a = g.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let ones = g.leaf(t(&[2, 1], &[1., 1.]));
        let y = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(y).data(), &[3., 7.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_closed_forms() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::scalar(0.0));
        let s = g.elementwise(ElemOp::Silu, z, None).unwrap();
        let sp = g.elementwise(ElemOp::Softplus, z, None).unwrap();
        assert_eq!(g.value(s).item(), 0.0);
        assert!((g.value(sp).item() - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn broadcast_rules() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[3, 2]));
        let col = g.leaf(Tensor::zeros(&[3, 1]));
        let row = g.leaf(Tensor::zeros(&[2]));
        let bad = g.leaf(Tensor::zeros(&[3]));
        assert!(g.add(a, col).is_ok());
        assert!(g.mul(a, row).is_ok());
        assert!(matches!(g.add(a, bad), Err(Error::Dimension { .. })));
        assert!(g.elementwise(ElemOp::Add, a, None).is_err());
    }

    #[test]
    fn reduce_mean_hand_case() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let m = g.mean(a, 0).unwrap();
        assert_eq!(g.value(m).data(), &[3., 4.]);
        assert!(matches!(g.mean(a, 2), Err(Error::Dimension { .. })));
        let idx = g.reduce(ReduceOp::MaxIndex, a, 1).unwrap();
        assert_eq!(g.value(idx).data(), &[1., 1., 1.]);
    }

    #[test]
    fn sum_of_zeros_has_zero_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::zeros(&[4]).with_grad());
        let sq = g.mul(w, w).unwrap();
        let s = g.sum_all(sq);
        assert_eq!(g.value(s).item(), 0.0);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn backward_hand_cases() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::zeros(&[2, 3]).with_grad());
        let s = g.sum_all(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0; 6]);

        let mut g = Graph::new();
        let w = g.leaf(t(&[2], &[1., -2.]).with_grad());
        let sq = g.mul(w, w).unwrap();
        let s = g.sum_all(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2., -4.]);
        // repeated backward accumulates
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[4., -8.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::zeros(&[2]).with_grad());
        assert!(matches!(g.backward(w), Err(Error::Contract { .. })));
    }

    #[test]
    fn row_ops_route_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]).with_grad());
        let rev = g.gather_rows(a, &[2, 1, 0, 0]).unwrap();
        assert_eq!(g.value(rev).data(), &[5., 6., 3., 4., 1., 2., 1., 2.]);
        let top = g.slice_rows(rev, 1, 2).unwrap();
        let col = g.slice_cols(top, 1, 1).unwrap();
        let cat = g.concat_rows(&[col, col]).unwrap();
        let s = g.sum_all(cat);
        g.backward(s).unwrap();
        // col picks column 1 of rows (3,4),(1,2) -> a rows 1 and 0, doubled
        assert_eq!(g.grad(a).unwrap(), &[0., 2., 0., 2., 0., 0.]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::zeros(&[2, 4]).with_grad());
        let ce = g.cross_entropy(l, &[0, 3]).unwrap();
        assert!((g.value(ce).item() - 4f32.ln()).abs() < 1e-6);
        g.backward(ce).unwrap();
        let gr = g.grad(l).unwrap();
        assert!((gr[0] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
        assert!((gr[1] - 0.125).abs() < 1e-7);
    }

    #[test]
    fn fingerprint_tracks_structure() {
        let build = |flip: bool| {
            let mut g = Graph::new();
            let a = g.leaf(Tensor::zeros(&[3, 2]));
            if flip {
                g.gather_rows(a, &[2, 1, 0]).unwrap();
            }
            g.sum_all(a);
            g.counter().fingerprint()
        };
        assert_eq!(build(true), build(true));
        assert_ne!(build(true), build(false));
    }
}
