use std::cell::{Cell, RefCell};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

use super::{gemm, ParamId, ParamStore, Tensor, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, LEAKY_RELU_SLOPE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Every pointwise operation, unary or binary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// How the right operand of a binary op maps onto the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `b` has one value per column of `a`.
    Row,
    /// `b` has one value per row of `a`.
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(a: &Tensor, b: &Tensor) -> Option<Broadcast> {
        if a.shape() == b.shape() {
            return Some(Broadcast::Same);
        }
        if b.numel() == 1 {
            return Some(Broadcast::Scalar);
        }
        if a.shape().len() == 2 {
            let (n, d) = (a.shape()[0], a.shape()[1]);
            let bs = b.shape();
            if (bs == [d] || bs == [1, d]) && b.numel() == d {
                return Some(Broadcast::Row);
            }
            if bs == [n, 1] {
                return Some(Broadcast::Col);
            }
        }
        if a.numel() == b.numel() && a.shape().len() <= 1 && b.shape().len() <= 2 {
            return Some(Broadcast::Same);
        }
        None
    }

    #[inline]
    fn map(self, i: usize, cols: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Row => i % cols,
            Broadcast::Col => i / cols,
            Broadcast::Scalar => 0,
        }
    }
}

#[derive(Clone, Debug)]
enum GatherIndex {
    Dense(Arc<[usize]>),
    Padded(Arc<[Option<usize>]>),
}

impl GatherIndex {
    fn len(&self) -> usize {
        match self {
            GatherIndex::Dense(i) => i.len(),
            GatherIndex::Padded(i) => i.len(),
        }
    }

    #[inline]
    fn get(&self, k: usize) -> Option<usize> {
        match self {
            GatherIndex::Dense(i) => Some(i[k]),
            GatherIndex::Padded(i) => i[k],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        bcast: Broadcast,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    SegmentReduce {
        kind: ReduceKind,
        a: usize,
        segments: Arc<[usize]>,
        counts: Vec<usize>,
        /// Winning input row per output cell (max only).
        argmax: Vec<Option<usize>>,
    },
    Gather {
        a: usize,
        index: GatherIndex,
    },
    Reshape {
        a: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    RowSoftmax {
        a: usize,
    },
    SegmentSoftmax {
        a: usize,
        segments: Arc<[usize]>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        a: usize,
        mask: Vec<f64>,
    },
    SumAll {
        a: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: usize,
        targets: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Unary { .. } => "unary",
            Op::Binary { .. } => "binary",
            Op::MatMul { .. } => "matmul",
            Op::SegmentReduce { .. } => "segment_reduce",
            Op::Gather { .. } => "gather",
            Op::Reshape { .. } => "reshape",
            Op::ConcatCols { .. } => "concat",
            Op::RowSoftmax { .. } => "row_softmax",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::SumAll { .. } => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Unary { a, .. }
            | Op::SegmentReduce { a, .. }
            | Op::Gather { a, .. }
            | Op::Reshape { a }
            | Op::RowSoftmax { a }
            | Op::SegmentSoftmax { a, .. }
            | Op::Dropout { a, .. }
            | Op::SumAll { a } => vec![*a],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } => vec![*a, *b],
            Op::ConcatCols { parts } => parts.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Running mean/variance buffers of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(dim: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }
}

/// Records operations for reverse-mode differentiation.
///
/// One tape serves one forward/backward pass; call [`Tape::reset`] or create
/// a new tape for the next one.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. a parameter, summed over every time it was placed on the tape.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut out: Option<Tensor> = None;
        for (pid, node) in &self.params {
            if *pid != id {
                continue;
            }
            if let Some(g) = &self.grads[*node] {
                match &mut out {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    /// Writes parameter gradients into the store, replacing previous ones.
    pub fn apply_to(&self, store: &mut ParamStore) {
        store.zero_grads();
        let mut seen: Vec<ParamId> = self.params.iter().map(|(p, _)| *p).collect();
        seen.sort();
        seen.dedup();
        for id in seen {
            if let Some(g) = self.param(id) {
                store.get_mut(id).grad = Some(g);
            }
        }
    }
}

fn check(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric { op })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[id] {
        Some(g) => g.data_mut().iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape"));
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.backward_done.set(false);
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable free variable.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, false)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Leaf { param: Some(id) }, p.trainable)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no inputs"));
        }
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].value.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = &nodes[p.id].value;
            if v.rows() != rows {
                return Err(Error::dim("concat", format!("row counts differ: {} vs {}", rows, v.rows())));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let v = &nodes[p.id].value;
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.backward_done.get() {
            return Err(Error::Contract("backward called twice on the same tape without reset".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    /// Line-oriented listing of the recorded operations.
    pub fn dump(&self) -> String {
        let nodes = self.nodes.borrow();
        let mut s = String::new();
        for (i, n) in nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i}\t{}\t{:?}\tinputs={:?}\tgrad={}",
                n.op.name(),
                n.value.shape(),
                n.op.inputs(),
                n.requires_grad
            );
        }
        s
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let gd = g.data();
    let needs = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Unary { kind, a } => {
            if !needs(*a) {
                return;
            }
            let x = nodes[*a].value.data();
            let y = node.value.data();
            let delta: Vec<f64> = match *kind {
                UnaryKind::Relu => gd.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                UnaryKind::LeakyRelu(s) => gd.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { g * s }).collect(),
                UnaryKind::Sigmoid => gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                UnaryKind::Tanh => gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                UnaryKind::Scale(c) => gd.iter().map(|g| g * c).collect(),
            };
            accumulate(grads, *a, nodes[*a].value.shape(), delta);
        }
        Op::Binary { kind, a, b, bcast } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let cols = av.cols().max(1);
            if needs(*a) {
                let delta: Vec<f64> = match kind {
                    BinaryKind::Add | BinaryKind::Sub => gd.to_vec(),
                    BinaryKind::Mul => gd
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * bv.data()[bcast.map(i, cols)])
                        .collect(),
                };
                accumulate(grads, *a, av.shape(), delta);
            }
            if needs(*b) {
                let mut delta = vec![0.0; bv.numel()];
                for (i, g) in gd.iter().enumerate() {
                    let j = bcast.map(i, cols);
                    delta[j] += match kind {
                        BinaryKind::Add => *g,
                        BinaryKind::Sub => -g,
                        BinaryKind::Mul => g * av.data()[i],
                    };
                }
                accumulate(grads, *b, bv.shape(), delta);
            }
        }
        Op::MatMul { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (n, k, m) = (av.rows(), av.cols(), bv.cols());
            if needs(*a) {
                let mut delta = vec![0.0; n * k];
                gemm(n, m, k, gd, false, bv.data(), true, &mut delta, 0.0);
                accumulate(grads, *a, av.shape(), delta);
            }
            if needs(*b) {
                let mut delta = vec![0.0; k * m];
                gemm(k, n, m, av.data(), true, gd, false, &mut delta, 0.0);
                accumulate(grads, *b, bv.shape(), delta);
            }
        }
        Op::SegmentReduce {
            kind,
            a,
            segments,
            counts,
            argmax,
        } => {
            if !needs(*a) {
                return;
            }
            let av = &nodes[*a].value;
            let d = av.cols();
            let mut delta = vec![0.0; av.numel()];
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    for (r, &s) in segments.iter().enumerate() {
                        let scale = if *kind == ReduceKind::Mean { 1.0 / counts[s] as f64 } else { 1.0 };
                        for c in 0..d {
                            delta[r * d + c] = gd[s * d + c] * scale;
                        }
                    }
                }
                ReduceKind::Max => {
                    for (cell, src) in argmax.iter().enumerate() {
                        if let Some(r) = src {
                            delta[r * d + cell % d] += gd[cell];
                        }
                    }
                }
            }
            accumulate(grads, *a, av.shape(), delta);
        }
        Op::Gather { a, index } => {
            if !needs(*a) {
                return;
            }
            let av = &nodes[*a].value;
            let d = av.cols();
            let mut delta = vec![0.0; av.numel()];
            for k in 0..index.len() {
                if let Some(r) = index.get(k) {
                    for c in 0..d {
                        delta[r * d + c] += gd[k * d + c];
                    }
                }
            }
            accumulate(grads, *a, av.shape(), delta);
        }
        Op::Reshape { a } => {
            if needs(*a) {
                accumulate(grads, *a, nodes[*a].value.shape(), gd.to_vec());
            }
        }
        Op::ConcatCols { parts } => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut offset = 0;
            for p in parts {
                let pv = &nodes[*p].value;
                let w = pv.cols();
                if needs(*p) {
                    let mut delta = Vec::with_capacity(pv.numel());
                    for r in 0..rows {
                        delta.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, *p, pv.shape(), delta);
                }
                offset += w;
            }
        }
        Op::RowSoftmax { a } => {
            if !needs(*a) {
                return;
            }
            let y = &node.value;
            let m = y.cols();
            let mut delta = vec![0.0; y.numel()];
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = &gd[r * m..(r + 1) * m];
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for c in 0..m {
                    delta[r * m + c] = yr[c] * (gr[c] - dot);
                }
            }
            accumulate(grads, *a, nodes[*a].value.shape(), delta);
        }
        Op::SegmentSoftmax { a, segments } => {
            if !needs(*a) {
                return;
            }
            let y = node.value.data();
            let groups = segments.iter().max().map_or(0, |m| m + 1);
            let mut dot = vec![0.0; groups];
            for (i, &s) in segments.iter().enumerate() {
                dot[s] += y[i] * gd[i];
            }
            let delta = segments
                .iter()
                .enumerate()
                .map(|(i, &s)| y[i] * (gd[i] - dot[s]))
                .collect();
            accumulate(grads, *a, nodes[*a].value.shape(), delta);
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let xv = &nodes[*x].value;
            let (n, d) = (xv.rows(), xv.cols());
            let gam = nodes[*gamma].value.data();
            let mut sum_g = vec![0.0; d];
            let mut sum_gx = vec![0.0; d];
            for r in 0..n {
                for c in 0..d {
                    let gi = gd[r * d + c];
                    sum_g[c] += gi;
                    sum_gx[c] += gi * xhat[r * d + c];
                }
            }
            if needs(*x) {
                let mut delta = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        let i = r * d + c;
                        delta[i] = if *batch_stats {
                            gam[c] * inv_std[c] / n as f64
                                * (n as f64 * gd[i] - sum_g[c] - xhat[i] * sum_gx[c])
                        } else {
                            gam[c] * inv_std[c] * gd[i]
                        };
                    }
                }
                accumulate(grads, *x, xv.shape(), delta);
            }
            if needs(*gamma) {
                accumulate(grads, *gamma, nodes[*gamma].value.shape(), sum_gx);
            }
            if needs(*beta) {
                accumulate(grads, *beta, nodes[*beta].value.shape(), sum_g);
            }
        }
        Op::Dropout { a, mask } => {
            if needs(*a) {
                let delta = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *a, nodes[*a].value.shape(), delta);
            }
        }
        Op::SumAll { a } => {
            if needs(*a) {
                let av = &nodes[*a].value;
                accumulate(grads, *a, av.shape(), vec![gd[0]; av.numel()]);
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            if !needs(*logits) {
                return;
            }
            let lv = &nodes[*logits].value;
            let (n, c) = (lv.rows(), lv.cols());
            let scale = gd[0] / n as f64;
            let mut delta: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &l) in labels.iter().enumerate() {
                delta[r * c + l] -= scale;
            }
            accumulate(grads, *logits, lv.shape(), delta);
        }
        Op::Mse { pred, targets } => {
            if !needs(*pred) {
                return;
            }
            let pv = &nodes[*pred].value;
            let n = targets.len() as f64;
            let delta = pv
                .data()
                .iter()
                .zip(targets)
                .map(|(p, t)| 2.0 * (p - t) * gd[0] / n)
                .collect();
            accumulate(grads, *pred, pv.shape(), delta);
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.with_value(Tensor::rows)
    }

    pub fn cols(&self) -> usize {
        self.with_value(Tensor::cols)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands live on different tapes");
    }

    pub fn elementwise(self, op: ElementwiseOp, other: Option<Var<'t>>) -> Result<Var<'t>> {
        let binary = |kind| {
            other
                .ok_or_else(|| Error::Contract(format!("{op:?} needs a second operand")))
                .and_then(|b| self.binary(kind, b))
        };
        match op {
            ElementwiseOp::Add => binary(BinaryKind::Add),
            ElementwiseOp::Sub => binary(BinaryKind::Sub),
            ElementwiseOp::Mul => binary(BinaryKind::Mul),
            ElementwiseOp::Relu => self.unary(UnaryKind::Relu),
            ElementwiseOp::LeakyRelu(s) => self.unary(UnaryKind::LeakyRelu(s)),
            ElementwiseOp::Sigmoid => self.unary(UnaryKind::Sigmoid),
            ElementwiseOp::Tanh => self.unary(UnaryKind::Tanh),
            ElementwiseOp::Scale(c) => self.unary(UnaryKind::Scale(c)),
        }
    }

    fn unary(self, kind: UnaryKind) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            let data = x
                .data()
                .iter()
                .map(|&v| match kind {
                    UnaryKind::Relu => v.max(0.0),
                    UnaryKind::LeakyRelu(s) => {
                        if v > 0.0 {
                            v
                        } else {
                            v * s
                        }
                    }
                    UnaryKind::Sigmoid => {
                        if v >= 0.0 {
                            1.0 / (1.0 + (-v).exp())
                        } else {
                            let e = v.exp();
                            e / (1.0 + e)
                        }
                    }
                    UnaryKind::Tanh => v.tanh(),
                    UnaryKind::Scale(c) => v * c,
                })
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        })?;
        let out = check("elementwise", out)?;
        Ok(self.tape.push(out, Op::Unary { kind, a: self.id }, self.requires_grad()))
    }

    fn binary(self, kind: BinaryKind, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let bcast = Broadcast::resolve(a, b).ok_or_else(|| {
            Error::dim("elementwise", format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape()))
        })?;
        let cols = a.cols().max(1);
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[bcast.map(i, cols)];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let rg = nodes[self.id].requires_grad || nodes[other.id].requires_grad;
        drop(nodes);
        let out = check("elementwise", out)?;
        Ok(self.tape.push(
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
                bcast,
            },
            rg,
        ))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Add, other)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Sub, other)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }

    /// `leaky_relu` with the default slope.
    pub fn leaky_relu_default(self) -> Result<Var<'t>> {
        self.leaky_relu(LEAKY_RELU_SLOPE)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::Scale(c))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let out = nodes[self.id].value.matmul(&nodes[other.id].value)?;
        let rg = nodes[self.id].requires_grad || nodes[other.id].requires_grad;
        drop(nodes);
        let out = check("matmul", out)?;
        Ok(self.tape.push(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            rg,
        ))
    }

    /// Aggregates rows into `num_segments` groups keyed by `segments`.
    ///
    /// Empty groups produce zero rows for every kind. Max routes its gradient
    /// to the first maximal row.
    pub fn segment_reduce(self, kind: ReduceKind, segments: &Arc<[usize]>, num_segments: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id].value;
        let (n, d) = (x.rows(), x.cols());
        if segments.len() != n {
            return Err(Error::dim(
                "segment_reduce",
                format!("{} segment ids for {} rows", segments.len(), n),
            ));
        }
        let mut counts = vec![0usize; num_segments];
        for (r, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(Error::index(
                    "segment_reduce",
                    format!("row {r} has segment id {s}, expected < {num_segments}"),
                ));
            }
            counts[s] += 1;
        }
        let mut out = vec![0.0; num_segments * d];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for (r, &s) in segments.iter().enumerate() {
                    let row = x.row(r);
                    for c in 0..d {
                        out[s * d + c] += row[c];
                    }
                }
                if kind == ReduceKind::Mean {
                    for s in 0..num_segments {
                        if counts[s] > 0 {
                            let inv = 1.0 / counts[s] as f64;
                            out[s * d..(s + 1) * d].iter_mut().for_each(|v| *v *= inv);
                        }
                    }
                }
            }
            ReduceKind::Max => {
                argmax = vec![None; num_segments * d];
                for (r, &s) in segments.iter().enumerate() {
                    let row = x.row(r);
                    for (c, &v) in row.iter().enumerate() {
                        let cell = s * d + c;
                        if argmax[cell].is_none() || v > out[cell] {
                            out[cell] = v;
                            argmax[cell] = Some(r);
                        }
                    }
                }
            }
        }
        let rg = nodes[self.id].requires_grad;
        drop(nodes);
        let out = check("segment_reduce", Tensor::matrix(num_segments, d, out)?)?;
        Ok(self.tape.push(
            out,
            Op::SegmentReduce {
                kind,
                a: self.id,
                segments: Arc::clone(segments),
                counts,
                argmax,
            },
            rg,
        ))
    }

    fn gather(self, index: GatherIndex) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id].value;
        let (n, d) = (x.rows(), x.cols());
        let mut data = vec![0.0; index.len() * d];
        for k in 0..index.len() {
            if let Some(r) = index.get(k) {
                if r >= n {
                    return Err(Error::index("gather", format!("row {r} out of range for {n} rows")));
                }
                data[k * d..(k + 1) * d].copy_from_slice(x.row(r));
            }
        }
        let rg = nodes[self.id].requires_grad;
        drop(nodes);
        let out = Tensor::matrix(index.len(), d, data)?;
        Ok(self.tape.push(out, Op::Gather { a: self.id, index }, rg))
    }

    /// Row `k` of the result is row `index[k]` of `self`.
    pub fn gather_rows(self, index: &Arc<[usize]>) -> Result<Var<'t>> {
        self.gather(GatherIndex::Dense(Arc::clone(index)))
    }

    /// Like [`Var::gather_rows`], with `None` producing a zero row.
    pub fn gather_rows_padded(self, index: &Arc<[Option<usize>]>) -> Result<Var<'t>> {
        self.gather(GatherIndex::Padded(Arc::clone(index)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(out, Op::Reshape { a: self.id }, rg))
    }

    pub fn row_softmax(self) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            let m = x.cols();
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(m.max(1)) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            Tensor::new(x.shape().to_vec(), data)
        })?;
        let out = check("row_softmax", out)?;
        Ok(self.tape.push(out, Op::RowSoftmax { a: self.id }, self.requires_grad()))
    }

    /// Softmax over groups of entries sharing a segment id. `self` holds one
    /// score per entry (`[n]` or `[n, 1]`).
    pub fn segment_softmax(self, segments: &Arc<[usize]>) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            if x.numel() != segments.len() {
                return Err(Error::dim(
                    "segment_softmax",
                    format!("{} scores for {} segment ids", x.numel(), segments.len()),
                ));
            }
            let groups = segments.iter().max().map_or(0, |m| m + 1);
            let mut mx = vec![f64::NEG_INFINITY; groups];
            for (v, &s) in x.data().iter().zip(segments.iter()) {
                mx[s] = mx[s].max(*v);
            }
            let mut data: Vec<f64> = x
                .data()
                .iter()
                .zip(segments.iter())
                .map(|(v, &s)| (v - mx[s]).exp())
                .collect();
            let mut total = vec![0.0; groups];
            for (v, &s) in data.iter().zip(segments.iter()) {
                total[s] += v;
            }
            for (v, &s) in data.iter_mut().zip(segments.iter()) {
                *v /= total[s];
            }
            Tensor::new(x.shape().to_vec(), data)
        })?;
        let out = check("segment_softmax", out)?;
        Ok(self.tape.push(
            out,
            Op::SegmentSoftmax {
                a: self.id,
                segments: Arc::clone(segments),
            },
            self.requires_grad(),
        ))
    }

    /// Batch normalization over rows. In training mode uses batch statistics
    /// and updates `stats`; otherwise normalizes with `stats`.
    pub fn batch_norm(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        stats: &mut BatchNormStats,
        training: bool,
    ) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id].value;
        let (n, d) = (x.rows(), x.cols());
        let (g, b) = (nodes[gamma.id].value.data(), nodes[beta.id].value.data());
        if g.len() != d || b.len() != d || stats.mean.len() != d {
            return Err(Error::dim("batch_norm", format!("feature width {d} vs affine width {}", g.len())));
        }
        if training && n == 0 {
            return Err(Error::EmptyBatch("batch_norm"));
        }
        let (mean, var) = if training {
            let mut mean = vec![0.0; d];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for r in 0..n {
                for c in 0..d {
                    let dv = x.at(r, c) - mean[c];
                    var[c] += dv * dv;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
            for c in 0..d {
                stats.mean[c] = (1.0 - BATCH_NORM_MOMENTUM) * stats.mean[c] + BATCH_NORM_MOMENTUM * mean[c];
                stats.var[c] = (1.0 - BATCH_NORM_MOMENTUM) * stats.var[c] + BATCH_NORM_MOMENTUM * var[c] * unbias;
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                let i = r * d + c;
                xhat[i] = (x.data()[i] - mean[c]) * inv_std[c];
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        let rg = nodes[self.id].requires_grad || nodes[gamma.id].requires_grad || nodes[beta.id].requires_grad;
        let shape = x.shape().to_vec();
        drop(nodes);
        let out = check("batch_norm", Tensor::new(shape, out)?)?;
        Ok(self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats: training,
            },
            rg,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in training mode,
    /// identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, training: bool, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(self);
        }
        let keep = 1.0 / (1.0 - p);
        let (out, mask) = self.with_value(|x| {
            let mask: Vec<f64> = (0..x.numel())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (Tensor::new(x.shape().to_vec(), data), mask)
        });
        Ok(self.tape.push(out?, Op::Dropout { a: self.id, mask }, self.requires_grad()))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let total = self.with_value(|x| x.data().iter().sum::<f64>());
        let out = check("sum", Tensor::scalar(total))?;
        Ok(self.tape.push(out, Op::SumAll { a: self.id }, self.requires_grad()))
    }

    /// Mean cross-entropy of row-wise logits against class labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = self.with_value(|x| -> Result<(f64, Vec<f64>)> {
            let (n, c) = (x.rows(), x.cols());
            if labels.len() != n {
                return Err(Error::dim("cross_entropy", format!("{} labels for {} rows", labels.len(), n)));
            }
            if n == 0 {
                return Err(Error::EmptyBatch("cross_entropy"));
            }
            let mut probs = vec![0.0; n * c];
            let mut total = 0.0;
            for (r, &l) in labels.iter().enumerate() {
                if l >= c {
                    return Err(Error::index("cross_entropy", format!("label {l} with {c} classes")));
                }
                let row = x.row(r);
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                let lse = mx + sum_exp.ln();
                total += lse - row[l];
                for k in 0..c {
                    probs[r * c + k] = (row[k] - lse).exp();
                }
            }
            Ok((total / n as f64, probs))
        })?;
        let out = check("cross_entropy", Tensor::scalar(loss))?;
        Ok(self.tape.push(
            out,
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
            self.requires_grad(),
        ))
    }

    /// Mean squared error against real targets, one per prediction.
    pub fn mse(self, targets: &[f64]) -> Result<Var<'t>> {
        let loss = self.with_value(|x| -> Result<f64> {
            if x.numel() != targets.len() {
                return Err(Error::dim("mse", format!("{} predictions for {} targets", x.numel(), targets.len())));
            }
            if targets.is_empty() {
                return Err(Error::EmptyBatch("mse"));
            }
            let sq: f64 = x.data().iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
            Ok(sq / targets.len() as f64)
        })?;
        let out = check("mse", Tensor::scalar(loss))?;
        Ok(self.tape.push(
            out,
            Op::Mse {
                pred: self.id,
                targets: targets.to_vec(),
            },
            self.requires_grad(),
        ))
    }
}
