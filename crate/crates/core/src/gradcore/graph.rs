use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation identifiers understood by [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpTag {
    Add,
    Sub,
    MulElem,
    Matmul,
    Scale,
    Neg,
    Abs,
    Log,
    Sigmoid,
    Relu,
    Softplus,
    SoftmaxRows,
    SumAll,
    MaxRows,
    GatherRows,
    BroadcastRow,
    BroadcastCol,
    Clip,
    Transpose,
}

/// Operation plus its non-tensor attributes, the generic entry point used by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpSpec {
    Add,
    Sub,
    MulElem,
    Matmul,
    Scale(f64),
    Neg,
    Abs,
    Log,
    Sigmoid,
    Relu,
    Softplus,
    SoftmaxRows,
    SumAll,
    MaxRows,
    GatherRows(Vec<usize>),
    BroadcastRow(usize),
    BroadcastCol(usize),
    Clip(f64, f64),
    Transpose,
}

impl OpSpec {
    pub fn tag(&self) -> OpTag {
        match self {
            OpSpec::Add => OpTag::Add,
            OpSpec::Sub => OpTag::Sub,
            OpSpec::MulElem => OpTag::MulElem,
            OpSpec::Matmul => OpTag::Matmul,
            OpSpec::Scale(_) => OpTag::Scale,
            OpSpec::Neg => OpTag::Neg,
            OpSpec::Abs => OpTag::Abs,
            OpSpec::Log => OpTag::Log,
            OpSpec::Sigmoid => OpTag::Sigmoid,
            OpSpec::Relu => OpTag::Relu,
            OpSpec::Softplus => OpTag::Softplus,
            OpSpec::SoftmaxRows => OpTag::SoftmaxRows,
            OpSpec::SumAll => OpTag::SumAll,
            OpSpec::MaxRows => OpTag::MaxRows,
            OpSpec::GatherRows(_) => OpTag::GatherRows,
            OpSpec::BroadcastRow(_) => OpTag::BroadcastRow,
            OpSpec::BroadcastCol(_) => OpTag::BroadcastCol,
            OpSpec::Clip(..) => OpTag::Clip,
            OpSpec::Transpose => OpTag::Transpose,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Matmul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Abs(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    SumAll(Var),
    /// Saves the column picked in each row.
    MaxRows(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    BroadcastRow(Var),
    BroadcastCol(Var),
    Clip(Var, f64, f64),
    Transpose(Var),
}

impl Op {
    fn tag(&self) -> Option<OpTag> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => OpTag::Add,
            Op::Sub(..) => OpTag::Sub,
            Op::MulElem(..) => OpTag::MulElem,
            Op::Matmul(..) => OpTag::Matmul,
            Op::Scale(..) => OpTag::Scale,
            Op::Neg(_) => OpTag::Neg,
            Op::Abs(_) => OpTag::Abs,
            Op::Log(_) => OpTag::Log,
            Op::Sigmoid(_) => OpTag::Sigmoid,
            Op::Relu(_) => OpTag::Relu,
            Op::Softplus(_) => OpTag::Softplus,
            Op::SoftmaxRows(_) => OpTag::SoftmaxRows,
            Op::SumAll(_) => OpTag::SumAll,
            Op::MaxRows(..) => OpTag::MaxRows,
            Op::GatherRows(..) => OpTag::GatherRows,
            Op::BroadcastRow(_) => OpTag::BroadcastRow,
            Op::BroadcastCol(_) => OpTag::BroadcastCol,
            Op::Clip(..) => OpTag::Clip,
            Op::Transpose(_) => OpTag::Transpose,
        })
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not reach the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

/// Append-only tape of tensor operations supporting reverse-mode differentiation.
///
/// A graph is built by one forward pass and consumed by one call to [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed_at: Option<usize>,
    fault: Option<(OpTag, f64)>,
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

    /// Scales every gradient flowing back through `tag` by `factor`.
    /// Only meant for negative-control tests of the gradient checker.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, tag: OpTag, factor: f64) {
        self.fault = Some((tag, factor));
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Tensor, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, value, requires_grad)
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} does not belong to this graph", v.0)));
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, v: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check_var(v)?;
        let value = self.value(v).map(f);
        Ok(self.push_op(op, value, &[v]))
    }

    /// Generic dispatcher over every supported operation.
    pub fn apply(&mut self, spec: OpSpec, inputs: &[Var]) -> Result<Var> {
        let arity = match spec {
            OpSpec::Add | OpSpec::Sub | OpSpec::MulElem | OpSpec::Matmul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(format!(
                "{:?} takes {arity} inputs, got {}",
                spec.tag(),
                inputs.len()
            )));
        }
        let a = inputs[0];
        match spec {
            OpSpec::Add => self.add(a, inputs[1]),
            OpSpec::Sub => self.sub(a, inputs[1]),
            OpSpec::MulElem => self.mul_elem(a, inputs[1]),
            OpSpec::Matmul => self.matmul(a, inputs[1]),
            OpSpec::Scale(c) => self.scale(a, c),
            OpSpec::Neg => self.neg(a),
            OpSpec::Abs => self.abs(a),
            OpSpec::Log => self.log(a),
            OpSpec::Sigmoid => self.sigmoid(a),
            OpSpec::Relu => self.relu(a),
            OpSpec::Softplus => self.softplus(a),
            OpSpec::SoftmaxRows => self.softmax_rows(a),
            OpSpec::SumAll => self.sum_all(a),
            OpSpec::MaxRows => self.max_rows(a),
            OpSpec::GatherRows(idx) => self.gather_rows(a, idx),
            OpSpec::BroadcastRow(n) => self.broadcast_row(a, n),
            OpSpec::BroadcastCol(n) => self.broadcast_col(a, n),
            OpSpec::Clip(lo, hi) => self.clip(a, lo, hi),
            OpSpec::Transpose => self.transpose(a),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_op(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push_op(Op::Sub(a, b), value, &[a, b]))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul_elem", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_op(Op::MulElem(a, b), value, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(Op::Matmul(a, b), value, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = x.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.set(r, c, e);
                total += e;
            }
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / total);
            }
        }
        Ok(self.push_op(Op::SoftmaxRows(a), out, &[a]))
    }

    /// Sum of every entry, as a 1 × 1 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let total = self.value(a).data().iter().sum();
        Ok(self.push_op(Op::SumAll(a), Tensor::scalar(total), &[a]))
    }

    /// Row-wise maximum (n × m → n × 1). Ties resolve to the first maximal column.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::shape("max_rows", "zero columns"));
        }
        let mut picks = Vec::with_capacity(x.rows());
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            picks.push(best);
            out.push(row[best]);
        }
        let value = Tensor::column(&out);
        Ok(self.push_op(Op::MaxRows(a, picks), value, &[a]))
    }

    /// Output row `r` is input row `indices[r]`.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        self.check_var(a)?;
        let x = self.value(a);
        let cols = x.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            if i >= x.rows() {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row index {i} out of range for {:?}", x.shape()),
                ));
            }
            data.extend_from_slice(x.row_slice(i));
        }
        let value = Tensor::new(indices.len(), cols, data)?;
        Ok(self.push_op(Op::GatherRows(a, indices), value, &[a]))
    }

    /// Repeats a 1 × m row `n` times (→ n × m).
    pub fn broadcast_row(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check_var(a)?;
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(Error::shape("broadcast_row", format!("expected 1 row, got {:?}", x.shape())));
        }
        let m = x.cols();
        let value = Tensor::from_fn(n, m, |_, c| x.get(0, c));
        Ok(self.push_op(Op::BroadcastRow(a), value, &[a]))
    }

    /// Repeats an n × 1 column `m` times (→ n × m).
    pub fn broadcast_col(&mut self, a: Var, m: usize) -> Result<Var> {
        self.check_var(a)?;
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(Error::shape("broadcast_col", format!("expected 1 column, got {:?}", x.shape())));
        }
        let value = Tensor::from_fn(x.rows(), m, |r, _| x.get(r, 0));
        Ok(self.push_op(Op::BroadcastCol(a), value, &[a]))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only where the input lies inside.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::Domain { op: "clip", detail: format!("empty interval [{lo}, {hi}]") });
        }
        self.unary(a, |x| x.clamp(lo, hi), Op::Clip(a, lo, hi))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let value = self.value(a).transpose();
        Ok(self.push_op(Op::Transpose(a), value, &[a]))
    }

    /// `b + x` with a 1 × m bias row broadcast over every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.shape(x).0;
        let b = self.broadcast_row(bias, n)?;
        self.add(x, b)
    }

    /// Runs reverse-mode differentiation from a 1 × 1 `loss`.
    ///
    /// A graph can be differentiated once; further calls fail until new nodes are recorded.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_var(loss)?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {:?}", self.shape(loss))));
        }
        if self.consumed_at == Some(self.nodes.len()) {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        self.consumed_at = Some(self.nodes.len());

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let factor = match (self.fault, node.op.tag()) {
                (Some((tag, f)), Some(t)) if tag == t => f,
                _ => 1.0,
            };
            self.backprop_node(node, &g, factor, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, factor: f64, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut send = |v: Var, contrib: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let contrib = if factor != 1.0 { contrib.map(|x| x * factor) } else { contrib };
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::MulElem(a, b) => {
                if wants(*a) {
                    send(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    send(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    // dA = G · Bᵀ
                    let bt = bv.transpose();
                    let mut out = Tensor::zeros(m, k);
                    matmul_into(g.data(), bt.data(), out.data_mut(), m, n, k);
                    send(*a, out);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let at = av.transpose();
                    let mut out = Tensor::zeros(k, n);
                    matmul_into(at.data(), g.data(), out.data_mut(), k, m, n);
                    send(*b, out);
                }
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * c)),
            Op::Neg(a) => send(*a, g.map(|x| -x)),
            Op::Abs(a) => send(*a, g.zip_map(val(*a), |gx, x| gx * sign(x))),
            Op::Log(a) => send(*a, g.zip_map(val(*a), |gx, x| gx / x)),
            Op::Sigmoid(a) => send(*a, g.zip_map(&node.value, |gx, y| gx * y * (1.0 - y))),
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Softplus(a) => send(*a, g.zip_map(val(*a), |gx, x| gx * sigmoid(x))),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols() {
                        out.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                send(*a, out);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::filled(r, c, g.item()));
            }
            Op::MaxRows(a, picks) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for (row, &col) in picks.iter().enumerate() {
                    out.set(row, col, g.get(row, 0));
                }
                send(*a, out);
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for (dst, &src) in indices.iter().enumerate() {
                    for col in 0..c {
                        out.set(src, col, out.get(src, col) + g.get(dst, col));
                    }
                }
                send(*a, out);
            }
            Op::BroadcastRow(a) => {
                let m = g.cols();
                let mut out = Tensor::zeros(1, m);
                for r in 0..g.rows() {
                    for c in 0..m {
                        out.set(0, c, out.get(0, c) + g.get(r, c));
                    }
                }
                send(*a, out);
            }
            Op::BroadcastCol(a) => {
                let sums: Vec<f64> = (0..g.rows()).map(|r| g.row_slice(r).iter().sum()).collect();
                send(*a, Tensor::column(&sums));
            }
            Op::Clip(a, lo, hi) => send(
                *a,
                g.zip_map(val(*a), |gx, x| if x >= *lo && x <= *hi { gx } else { 0.0 }),
            ),
            Op::Transpose(a) => send(*a, g.transpose()),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// Subgradient 0 at the kink.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
