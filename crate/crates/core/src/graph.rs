//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, which doubles as the topological
//! order: an op can only reference nodes that already exist. Shapes are
//! inferred when a node is added, so a built graph is shape-consistent by
//! construction. [`ComputeGraph::forward_eval`] binds the named inputs and
//! caches every intermediate; [`ComputeGraph::backward`] then propagates a
//! seed gradient from any node back to every ancestor.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    /// Position in topological order.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Constant(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    ClampMin(NodeId, f64),
    Softmax(NodeId),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MaxPool(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    Sum(NodeId),
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    Pick(NodeId, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::Softmax(_) => "softmax",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool(_) => "max_pool",
            Op::Gather { .. } => "gather",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::Concat(_) => "concat",
            Op::Pick(..) => "pick",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// A recorded computation over dense tensors.
///
/// Confined to one thread; distinct graphs share nothing.
#[derive(Debug, Clone, Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    values: Option<Vec<Tensor>>,
}

/// Gradients of one backward pass, one slot per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    inputs: Vec<(String, NodeId)>,
}

impl Gradients {
    /// Gradient with respect to `node`, or `None` if the node is not an
    /// ancestor of the differentiated output. Input nodes always have a slot.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to the named input.
    pub fn input(&self, name: &str) -> Option<&Tensor> {
        self.inputs
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, id)| self.wrt(*id))
    }
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize]> {
        self.node(id).map(|n| n.shape.as_slice())
    }

    /// The node of the named input, if declared.
    pub fn input_node(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| matches!(&n.op, Op::Input(x) if x == name))
            .map(NodeId)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.values = None;
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a named input (data or parameter) bound at evaluation time.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if self.input_node(name).is_some() {
            return Err(Error::InvalidArgument(format!(
                "input `{name}` declared twice"
            )));
        }
        // validates the shape
        Tensor::zeros(shape)?;
        Ok(self.push(Op::Input(name.to_string()), shape.to_vec()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    /// Elementwise sum. `b` may also be a row vector (`[n]` or `[1, n]`)
    /// broadcast over the rows of a 2-D `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a)?.to_vec(), self.shape(b)?);
        if sa != sb && !is_row_broadcast(&sa, sb) {
            return Err(mismatch("add", &sa, sb));
        }
        Ok(self.push(Op::Add(a, b), sa))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::NonFinite("scale factor".to_string()));
        }
        let shape = self.shape(a)?.to_vec();
        Ok(self.push(Op::Scale(a, factor), shape))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a)?.to_vec(), self.shape(b)?.to_vec());
        match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => {
                let shape = vec![*m, *n];
                Ok(self.push(Op::MatMul(a, b), shape))
            }
            _ => Err(mismatch("matmul", &sa, &sb)),
        }
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a))
    }

    /// Natural logarithm.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a))
    }

    /// Absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Abs(a))
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.unary(a, Op::ClampMin(a, floor))
    }

    /// Softmax along the last axis (each row of a matrix independently).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softmax(a))
    }

    /// Same-padded 1-D convolution over a `[T, C]` sequence with a
    /// `[K, C, F]` kernel (K odd) and `[F]` bias, giving `[T, F]`.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let si = self.shape(input)?.to_vec();
        let sw = self.shape(weight)?.to_vec();
        let sb = self.shape(bias)?.to_vec();
        let (t, c) = match si.as_slice() {
            [t, c] => (*t, *c),
            _ => return Err(mismatch("conv1d", &[0, 0], &si)),
        };
        let f = match sw.as_slice() {
            [k, c2, f] if *c2 == c && k % 2 == 1 => *f,
            _ => return Err(mismatch("conv1d", &[1, c, 0], &sw)),
        };
        if sb != [f] {
            return Err(mismatch("conv1d", &[f], &sb));
        }
        Ok(self.push(
            Op::Conv1d {
                input,
                weight,
                bias,
            },
            vec![t, f],
        ))
    }

    /// Column-wise maximum of a `[T, F]` matrix, giving `[1, F]`. Ties route
    /// the gradient to the first maximal row.
    pub fn max_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?.to_vec();
        match s.as_slice() {
            [_, f] => {
                let shape = vec![1, *f];
                Ok(self.push(Op::MaxPool(a), shape))
            }
            _ => Err(mismatch("max_pool", &[0, 0], &s)),
        }
    }

    /// Rows of a `[V, E]` table selected by `ids`, giving `[ids.len(), E]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let s = self.shape(table)?.to_vec();
        let (v, e) = match s.as_slice() {
            [v, e] => (*v, *e),
            _ => return Err(mismatch("gather", &[0, 0], &s)),
        };
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::TokenOutOfRange { id, vocab_size: v });
        }
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            vec![ids.len(), e],
        ))
    }

    /// Sum of all elements, giving `[1]`.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.shape(a)?;
        Ok(self.push(Op::Sum(a), vec![1]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let s = self.shape(a)?.to_vec();
        Tensor::zeros(shape)?;
        if s.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(mismatch("reshape", &s, shape));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec()))
    }

    /// Concatenation along the last axis. All parts must be 1-D, or 2-D
    /// with a common row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = match parts.first() {
            Some(&p) => self.shape(p)?.to_vec(),
            None => return Err(Error::Empty("concat parts")),
        };
        let mut out = first.clone();
        for &p in &parts[1..] {
            let s = self.shape(p)?;
            match (first.as_slice(), s) {
                ([_], [n]) => out[0] += n,
                ([r, _], [r2, n]) if r == r2 => out[1] += n,
                _ => return Err(mismatch("concat", &first, s)),
            }
        }
        if out.len() > 2 {
            return Err(mismatch("concat", &[0, 0], &out));
        }
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    /// Element `index` of the row-major data, giving `[1]`.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let numel: usize = self.shape(a)?.iter().product();
        if index >= numel {
            return Err(Error::InvalidArgument(format!(
                "pick index {index} out of range for {numel} elements"
            )));
        }
        Ok(self.push(Op::Pick(a, index), vec![1]))
    }

    fn unary(&mut self, a: NodeId, op: Op) -> Result<NodeId> {
        let shape = self.shape(a)?.to_vec();
        Ok(self.push(op, shape))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    /// Binds `inputs` by name and evaluates every node in topological
    /// order, caching the values for [`Self::value`] and [`Self::backward`].
    pub fn forward_eval(&mut self, inputs: &[(&str, &Tensor)]) -> Result<()> {
        self.values = None;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let data = match &node.op {
                Op::Input(name) => {
                    let bound = inputs
                        .iter()
                        .find(|(n, _)| *n == name.as_str())
                        .map(|(_, t)| *t)
                        .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                    if bound.shape() != node.shape.as_slice() {
                        return Err(mismatch("input", &node.shape, bound.shape()));
                    }
                    if !bound.is_finite() {
                        return Err(Error::NonFinite(format!("input `{name}`")));
                    }
                    bound.data().to_vec()
                }
                op => eval_op(op, &node.shape, &values),
            };
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{} (node {}, element {pos})",
                    node.op.name(),
                    values.len()
                )));
            }
            values.push(Tensor::from_parts_unchecked(node.shape.clone(), data));
        }
        self.values = Some(values);
        Ok(())
    }

    /// Cached value of a node after [`Self::forward_eval`].
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.node(id)?;
        self.values
            .as_ref()
            .map(|v| &v[id.0])
            .ok_or(Error::NotEvaluated)
    }

    /// Reverse-mode pass from `output`, seeded with `seed` (same shape as
    /// `output`). Returns gradients for every ancestor of `output`; inputs
    /// that do not influence it get zero gradients.
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        let values = self.values.as_ref().ok_or(Error::NotEvaluated)?;
        let out_node = self.node(output)?;
        if seed.shape() != out_node.shape.as_slice() {
            return Err(mismatch("backward seed", &out_node.shape, seed.shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.data().to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            backprop_op(&self.nodes[idx].op, &g, &values[idx], values, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        let mut inputs = Vec::new();
        for (idx, (node, grad)) in self.nodes.iter().zip(grads).enumerate() {
            let grad = match (grad, &node.op) {
                (Some(g), _) => Some(g),
                (None, Op::Input(_)) => Some(vec![0.0; node.shape.iter().product()]),
                (None, _) => None,
            };
            if let Some(g) = &grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} (node {idx})",
                        node.op.name()
                    )));
                }
            }
            if let Op::Input(name) = &node.op {
                inputs.push((name.clone(), NodeId(idx)));
            }
            out.push(grad.map(|g| Tensor::from_parts_unchecked(node.shape.clone(), g)));
        }
        Ok(Gradients { grads: out, inputs })
    }
}

fn mismatch(op: &'static str, expected: &[usize], found: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

fn is_row_broadcast(a: &[usize], b: &[usize]) -> bool {
    match (a, b) {
        ([_, n], [m]) => n == m,
        ([_, n], [1, m]) => n == m,
        _ => false,
    }
}

fn eval_op(op: &Op, shape: &[usize], values: &[Tensor]) -> Vec<f64> {
    let v = |id: &NodeId| values[id.0].data();
    let map = |id: &NodeId, f: &dyn Fn(f64) -> f64| v(id).iter().map(|&x| f(x)).collect();
    match op {
        Op::Input(_) => unreachable!("inputs are bound by forward_eval"),
        Op::Constant(t) => t.data().to_vec(),
        Op::Add(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.len() == b.len() {
                a.iter().zip(b).map(|(x, y)| x + y).collect()
            } else {
                let n = b.len();
                a.iter().enumerate().map(|(i, x)| x + b[i % n]).collect()
            }
        }
        Op::Sub(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x - y).collect(),
        Op::Mul(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x * y).collect(),
        Op::Scale(a, c) => map(a, &|x| x * c),
        Op::MatMul(a, b) => {
            let k = values[a.0].shape()[1];
            matmul(v(a), v(b), shape[0], k, shape[1])
        }
        Op::Tanh(a) => map(a, &|x| libm::tanh(x)),
        Op::Sigmoid(a) => map(a, &sigmoid),
        Op::Exp(a) => map(a, &|x| libm::exp(x)),
        Op::Log(a) => map(a, &|x| libm::log(x)),
        Op::Abs(a) => map(a, &|x| x.abs()),
        Op::ClampMin(a, lo) => map(a, &|x| x.max(*lo)),
        Op::Softmax(a) => {
            let cols = *shape.last().unwrap();
            let mut out = v(a).to_vec();
            out.chunks_mut(cols).for_each(softmax_in_place);
            out
        }
        Op::Conv1d {
            input,
            weight,
            bias,
        } => {
            let (t, c) = (shape[0], values[input.0].shape()[1]);
            let k = values[weight.0].shape()[0];
            conv1d(v(input), v(weight), v(bias), t, c, k, shape[1])
        }
        Op::MaxPool(a) => {
            let f = shape[1];
            let x = v(a);
            (0..f)
                .map(|j| {
                    x.iter()
                        .skip(j)
                        .step_by(f)
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        }
        Op::Gather { table, ids } => {
            let e = shape[1];
            let t = v(table);
            let mut out = Vec::with_capacity(ids.len() * e);
            for &id in ids {
                out.extend_from_slice(&t[id * e..(id + 1) * e]);
            }
            out
        }
        Op::Sum(a) => vec![v(a).iter().sum()],
        Op::Reshape(a) => v(a).to_vec(),
        Op::Concat(parts) => {
            let rows = if shape.len() == 2 { shape[0] } else { 1 };
            let mut out = Vec::with_capacity(shape.iter().product());
            for r in 0..rows {
                for p in parts {
                    let cols = *values[p.0].shape().last().unwrap();
                    out.extend_from_slice(&v(p)[r * cols..(r + 1) * cols]);
                }
            }
            out
        }
        Op::Pick(a, i) => vec![v(a)[*i]],
    }
}

fn backprop_op(
    op: &Op,
    g: &[f64],
    out: &Tensor,
    values: &[Tensor],
    grads: &mut [Option<Vec<f64>>],
) -> Result<()> {
    let v = |id: &NodeId| values[id.0].data();
    match op {
        Op::Input(_) | Op::Constant(_) => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, values, |ga| add_into(ga, g));
            let bn = values[b.0].len();
            accumulate(grads, *b, values, |gb| {
                for (i, gi) in g.iter().enumerate() {
                    gb[i % bn] += gi;
                }
            });
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, values, |ga| add_into(ga, g));
            accumulate(grads, *b, values, |gb| {
                gb.iter_mut().zip(g).for_each(|(x, gi)| *x -= gi)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (v(a), v(b));
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accumulate(grads, *b, values, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale(a, c) => accumulate(grads, *a, values, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += c * gi)
        }),
        Op::MatMul(a, b) => {
            let (m, k) = (values[a.0].shape()[0], values[a.0].shape()[1]);
            let n = values[b.0].shape()[1];
            let (av, bv) = (v(a), v(b));
            // dA = G B^T, dB = A^T G
            accumulate(grads, *a, values, |ga| {
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            });
            accumulate(grads, *b, values, |gb| {
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
            });
        }
        Op::Tanh(a) => {
            let y = out.data();
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        Op::Exp(a) => {
            let y = out.data();
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i];
                }
            });
        }
        Op::Log(a) => {
            let x = v(a);
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] / x[i];
                }
            });
        }
        Op::Abs(a) => {
            let x = v(a);
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    let sign = if x[i] > 0.0 {
                        1.0
                    } else if x[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ga[i] += g[i] * sign;
                }
            });
        }
        Op::ClampMin(a, lo) => {
            let x = v(a);
            accumulate(grads, *a, values, |ga| {
                for i in 0..g.len() {
                    if x[i] > *lo {
                        ga[i] += g[i];
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let cols = *out.shape().last().unwrap();
            let y = out.data();
            accumulate(grads, *a, values, |ga| {
                for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..cols {
                        ga[r * cols + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::Conv1d {
            input,
            weight,
            bias,
        } => {
            let (t, c) = (values[input.0].shape()[0], values[input.0].shape()[1]);
            let (k, f) = (values[weight.0].shape()[0], values[weight.0].shape()[2]);
            let pad = k / 2;
            let (x, w) = (v(input), v(weight));
            accumulate(grads, *input, values, |gx| {
                for tt in 0..t {
                    for kk in 0..k {
                        let Some(src) = (tt + kk).checked_sub(pad).filter(|&s| s < t) else {
                            continue;
                        };
                        for cc in 0..c {
                            let wrow = &w[(kk * c + cc) * f..(kk * c + cc + 1) * f];
                            let grow = &g[tt * f..(tt + 1) * f];
                            gx[src * c + cc] +=
                                wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            });
            accumulate(grads, *weight, values, |gw| {
                for tt in 0..t {
                    for kk in 0..k {
                        let Some(src) = (tt + kk).checked_sub(pad).filter(|&s| s < t) else {
                            continue;
                        };
                        for cc in 0..c {
                            let xv = x[src * c + cc];
                            let base = (kk * c + cc) * f;
                            for ff in 0..f {
                                gw[base + ff] += xv * g[tt * f + ff];
                            }
                        }
                    }
                }
            });
            accumulate(grads, *bias, values, |gb| {
                for tt in 0..t {
                    add_into(gb, &g[tt * f..(tt + 1) * f]);
                }
            });
        }
        Op::MaxPool(a) => {
            let f = out.shape()[1];
            let x = v(a);
            let rows = x.len() / f;
            accumulate(grads, *a, values, |ga| {
                for j in 0..f {
                    let mut best = 0;
                    for r in 1..rows {
                        if x[r * f + j] > x[best * f + j] {
                            best = r;
                        }
                    }
                    ga[best * f + j] += g[j];
                }
            });
        }
        Op::Gather { table, ids } => {
            let e = out.shape()[1];
            accumulate(grads, *table, values, |gt| {
                for (row, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * e..(id + 1) * e], &g[row * e..(row + 1) * e]);
                }
            });
        }
        Op::Sum(a) => accumulate(grads, *a, values, |ga| {
            ga.iter_mut().for_each(|x| *x += g[0])
        }),
        Op::Reshape(a) => accumulate(grads, *a, values, |ga| add_into(ga, g)),
        Op::Concat(parts) => {
            let total = *out.shape().last().unwrap();
            let rows = g.len() / total;
            let mut offset = 0;
            for p in parts {
                let cols = *values[p.0].shape().last().unwrap();
                accumulate(grads, *p, values, |gp| {
                    for r in 0..rows {
                        add_into(
                            &mut gp[r * cols..(r + 1) * cols],
                            &g[r * total + offset..r * total + offset + cols],
                        );
                    }
                });
                offset += cols;
            }
        }
        Op::Pick(a, i) => accumulate(grads, *a, values, |ga| ga[*i] += g[0]),
    }
    Ok(())
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    values: &[Tensor],
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[id.0].get_or_insert_with(|| vec![0.0; values[id.0].len()]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax, so adding a constant to every score leaves the
/// result unchanged.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

fn conv1d(x: &[f64], w: &[f64], b: &[f64], t: usize, c: usize, k: usize, f: usize) -> Vec<f64> {
    let pad = k / 2;
    let mut out = Vec::with_capacity(t * f);
    for tt in 0..t {
        out.extend_from_slice(b);
        let orow = tt * f;
        for kk in 0..k {
            let Some(src) = (tt + kk).checked_sub(pad).filter(|&s| s < t) else {
                continue;
            };
            for cc in 0..c {
                let xv = x[src * c + cc];
                let wrow = &w[(kk * c + cc) * f..(kk * c + cc + 1) * f];
                for ff in 0..f {
                    out[orow + ff] += xv * wrow[ff];
                }
            }
        }
    }
    out
}
