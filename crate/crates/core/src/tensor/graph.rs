use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{contract_err, shape_err, Error, Result};

/// Index of a node in its [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Input tensor: a trainable parameter or a constant.
    Leaf,
    /// Matrix product of rank-1/rank-2 operands. A rank-1 left operand is a
    /// row vector, a rank-1 right operand is a column vector.
    MatMul(NodeId, NodeId),
    /// Elementwise sum; the right operand may be a vector broadcast over rows.
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Softmax along the last axis.
    Softmax(NodeId),
    /// Concatenation along the last axis.
    Concat(Vec<NodeId>),
    /// `sum_i weights[i] * items[i]`.
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    /// Mean over the first axis.
    Mean(NodeId),
    Log(NodeId),
    Neg(NodeId),
    /// Sum of all entries.
    Sum(NodeId),
    Scale(NodeId, f64),
    /// Row `index` of a rank-2 table.
    Row { table: NodeId, index: usize },
    /// `-log softmax(logits)[target]` for a rank-1 logit vector.
    SoftmaxXent { logits: NodeId, target: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Concat(_) => "concat",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Mean(_) => "mean",
            Op::Log(_) => "log",
            Op::Neg(_) => "neg",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::Row { .. } => "row",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }

    fn for_each_input(&self, mut f: impl FnMut(NodeId)) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Mean(a)
            | Op::Log(a)
            | Op::Neg(a)
            | Op::Sum(a)
            | Op::Scale(a, _)
            | Op::Row { table: a, .. }
            | Op::SoftmaxXent { logits: a, .. } => f(*a),
            Op::Concat(items) => items.iter().copied().for_each(f),
            Op::WeightedSum { weights, items } => {
                f(*weights);
                items.iter().copied().for_each(f);
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of operations. Insertion order is a topological order,
/// so backward simply walks the node list in reverse.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = libm::exp(v - max);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log sum exp(x)` with max subtraction.
pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = x.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(total)
}

/// Gradient buffer for `id`, allocated on first use; `None` when the node
/// does not depend on any parameter.
fn slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    id: NodeId,
) -> Option<&'g mut Vec<f64>> {
    let input = &nodes[id.0];
    if !input.needs_grad {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; input.value.len()]))
}

/// (m, k, n) view of a matmul and the output dims.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    let (m, k1) = match a {
        [k] => (1, *k),
        [m, k] => (*m, *k),
        _ => return Err(shape_err!("matmul left operand must be rank 1 or 2, got {a:?}")),
    };
    let (k2, n) = match b {
        [k] => (*k, 1),
        [k, n] => (*k, *n),
        _ => return Err(shape_err!("matmul right operand must be rank 1 or 2, got {b:?}")),
    };
    if k1 != k2 {
        return Err(shape_err!("matmul inner dims differ: {a:?} x {b:?}"));
    }
    let out = match (a.len(), b.len()) {
        (2, 2) => vec![m, n],
        (2, 1) => vec![m],
        (1, 2) => vec![n],
        _ => vec![1],
    };
    Ok((m, k1, n, out))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Gradient written by the last [`Graph::backward`], if this node needed one.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Result<NodeId> {
        self.leaf(t, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        self.leaf(t, false)
    }

    fn leaf(&mut self, mut t: Tensor, needs_grad: bool) -> Result<NodeId> {
        t.check_finite(&format!("leaf node {}", self.nodes.len()))?;
        t.clear_grad();
        self.nodes.push(Node { op: Op::Leaf, value: t, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn push(&mut self, op: Op, dims: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let idx = self.nodes.len();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "node {idx} ({}) produced {} at entry {i}",
                op.name(),
                data[i]
            )));
        }
        let mut needs_grad = false;
        op.for_each_input(|n| needs_grad |= self.nodes[n.0].needs_grad);
        let value = Tensor { dims, data, grad: None };
        self.nodes.push(Node { op, value, needs_grad });
        Ok(NodeId(idx))
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(contract_err!("node {} does not exist in this graph", id.0))
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n, dims) = matmul_dims(av.dims(), bv.dims())?;
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &x) in arow.iter().enumerate() {
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Op::MatMul(a, b), dims, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f64> = if av.dims() == bv.dims() {
            av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect()
        } else if bv.rank() == 1 && av.rank() == 2 && av.cols() == bv.len() {
            let c = bv.len();
            av.data().iter().enumerate().map(|(i, x)| x + bv.data()[i % c]).collect()
        } else {
            return Err(shape_err!("add: {:?} + {:?}", av.dims(), bv.dims()));
        };
        let dims = av.dims().to_vec();
        self.push(Op::Add(a, b), dims, data)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(shape_err!("mul: {:?} * {:?}", av.dims(), bv.dims()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let dims = av.dims().to_vec();
        self.push(Op::Mul(a, b), dims, data)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        self.check_id(a)?;
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let dims = av.dims().to_vec();
        self.push(op, dims, data)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a), libm::log)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        let av = self.value(a);
        let c = av.cols();
        let mut out = vec![0.0; av.len()];
        for (x, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_into(x, o);
        }
        let dims = av.dims().to_vec();
        self.push(Op::Softmax(a), dims, out)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        let av = self.value(a);
        let n = av.dims()[0];
        let dims = if av.rank() == 1 { vec![1] } else { av.dims()[1..].to_vec() };
        let width = av.len() / n;
        let mut out = vec![0.0; width];
        for chunk in av.data().chunks(width) {
            for (o, &x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= n as f64;
        }
        self.push(Op::Mean(a), dims, out)
    }

    pub fn concat(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = *items.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        for &i in items {
            self.check_id(i)?;
        }
        let lead = self.value(first).dims()[..self.value(first).rank() - 1].to_vec();
        let rows = self.value(first).rows();
        let mut width = 0;
        for &i in items {
            let v = self.value(i);
            if v.dims()[..v.rank() - 1] != lead[..] {
                return Err(shape_err!("concat: leading dims {:?} vs {lead:?}", v.dims()));
            }
            width += v.cols();
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &i in items {
                let v = self.value(i);
                let c = v.cols();
                out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let mut dims = lead;
        dims.push(width);
        self.push(Op::Concat(items.to_vec()), dims, out)
    }

    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        self.check_id(weights)?;
        let first = *items.first().ok_or_else(|| shape_err!("weighted_sum of nothing"))?;
        for &i in items {
            self.check_id(i)?;
        }
        let w = self.value(weights);
        if w.rank() != 1 || w.len() != items.len() {
            return Err(shape_err!("weighted_sum: {} weights for {} items", w.len(), items.len()));
        }
        let dims = self.value(first).dims().to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for (&wi, &item) in w.data().iter().zip(items) {
            let v = self.value(item);
            if v.dims() != &dims[..] {
                return Err(shape_err!("weighted_sum: item dims {:?} vs {dims:?}", v.dims()));
            }
            for (o, &x) in out.iter_mut().zip(v.data()) {
                *o += wi * x;
            }
        }
        self.push(Op::WeightedSum { weights, items: items.to_vec() }, dims, out)
    }

    pub fn row(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        self.check_id(table)?;
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(shape_err!("row: table must be rank 2, got {:?}", t.dims()));
        }
        if index >= t.rows() {
            return Err(contract_err!("row {index} out of range for {} rows", t.rows()));
        }
        let data = t.row(index).to_vec();
        let dims = vec![t.cols()];
        self.push(Op::Row { table, index }, dims, data)
    }

    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        self.check_id(logits)?;
        let l = self.value(logits);
        if l.rank() != 1 {
            return Err(shape_err!("softmax_xent: logits must be rank 1, got {:?}", l.dims()));
        }
        if target >= l.len() {
            return Err(contract_err!("target {target} out of range for {} logits", l.len()));
        }
        let loss = log_sum_exp(l.data()) - l.data()[target];
        self.push(Op::SoftmaxXent { logits, target }, vec![1], vec![loss])
    }

    /// Writes `d loss / d node` into every node that depends on a parameter.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check_id(loss)?;
        if self.backward_done {
            return Err(Error::State("backward already ran; call reset_grads first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(contract_err!("loss must be scalar, got dims {:?}", self.value(loss).dims()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.grad = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        self.backward_done = false;
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n, _) = matmul_dims(av.dims(), bv.dims()).expect("checked on forward");
                let (ad, bd) = (av.data(), bv.data());
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    let c = gb.len();
                    for (i, &x) in g.iter().enumerate() {
                        gb[i % c] += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(ad) {
                        *o += x * y;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((o, &x), &y) in or.iter_mut().zip(gr).zip(yr) {
                            *o += y * (x - dot);
                        }
                    }
                }
            }
            Op::Concat(items) => {
                let rows = node.value.rows();
                let width = node.value.cols();
                let mut offset = 0;
                for &item in items {
                    let c = nodes[item.0].value.cols();
                    if let Some(gi) = slot(nodes, grads, item) {
                        for r in 0..rows {
                            let src = &g[r * width + offset..r * width + offset + c];
                            for (o, &x) in gi[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::WeightedSum { weights, items } => {
                let w = nodes[weights.0].value.data();
                for (&wi, &item) in w.iter().zip(items) {
                    if let Some(gi) = slot(nodes, grads, item) {
                        for (o, &x) in gi.iter_mut().zip(g) {
                            *o += wi * x;
                        }
                    }
                }
                if let Some(gw) = slot(nodes, grads, *weights) {
                    for (o, &item) in gw.iter_mut().zip(items) {
                        let v = nodes[item.0].value.data();
                        *o += v.iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.dims()[0] as f64;
                if let Some(ga) = slot(nodes, grads, *a) {
                    let width = g.len();
                    for chunk in ga.chunks_mut(width) {
                        for (o, &x) in chunk.iter_mut().zip(g) {
                            *o += x / n;
                        }
                    }
                }
            }
            Op::Log(a) => {
                let x = nodes[a.0].value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, &gx), &v) in ga.iter_mut().zip(g).zip(x) {
                        *o += gx / v;
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o -= x;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x * factor;
                    }
                }
            }
            Op::Row { table, index } => {
                if let Some(gt) = slot(nodes, grads, *table) {
                    let c = g.len();
                    for (o, &x) in gt[index * c..(index + 1) * c].iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            Op::SoftmaxXent { logits, target } => {
                let l = nodes[logits.0].value.data();
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let mut p = vec![0.0; l.len()];
                    softmax_into(l, &mut p);
                    p[*target] -= 1.0;
                    for (o, &x) in gl.iter_mut().zip(&p) {
                        *o += g[0] * x;
                    }
                }
            }
        }
    }
}
