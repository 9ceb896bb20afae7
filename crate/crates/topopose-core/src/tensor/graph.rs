//! Computation graphs: primitive ops, the builder, and forward evaluation.

use std::collections::{BTreeMap, HashMap};

use super::kernels as k;
use super::{Bindings, Real, Tensor, TensorError};

pub type NodeId = usize;

/// Primitive operations. Binary elementwise ops broadcast right-aligned
/// (paired extents equal or 1); reductions and softmax act along one axis;
/// `Scan` runs the recurrence `h_t = a_t ⊙ h_{t-1} + b_t` along axis 0.
#[derive(Debug, Clone)]
pub enum OpKind {
    Input(String),
    Param(String),
    Constant(Tensor),
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Concat(usize),
    Slice { axis: usize, start: usize, len: usize },
    Reshape(Vec<usize>),
    Transpose,
    ReverseLast,
    /// Row gather along axis 0 with indices fixed at build time.
    Gather(Vec<usize>),
    Exp,
    Log,
    Sqrt,
    Softplus,
    /// Sigmoid-weighted linear unit x·σ(x).
    Silu,
    Relu,
    LeakyRelu(Real),
    Scale(Real),
    AddConst(Real),
    MaxConst(Real),
    Softmax(usize),
    ReduceSum(usize),
    ReduceMean(usize),
    ReduceMax(usize),
    ReduceMin(usize),
    Scan,
}

impl OpKind {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            OpKind::Input(_) => "input",
            OpKind::Param(_) => "param",
            OpKind::Constant(_) => "const",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Concat(_) => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape(_) => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::ReverseLast => "reverse_last",
            OpKind::Gather(_) => "gather",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Softplus => "softplus",
            OpKind::Silu => "silu",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Scale(_) => "scale",
            OpKind::AddConst(_) => "add_const",
            OpKind::MaxConst(_) => "max_const",
            OpKind::Softmax(_) => "softmax",
            OpKind::ReduceSum(_) => "reduce_sum",
            OpKind::ReduceMean(_) => "reduce_mean",
            OpKind::ReduceMax(_) => "reduce_max",
            OpKind::ReduceMin(_) => "reduce_min",
            OpKind::Scan => "scan",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
}

/// Immutable DAG of primitive ops. Nodes are stored in topological order
/// (every input id precedes its consumer); leaves are named inputs and
/// parameters bound at evaluation time.
#[derive(Debug, Clone)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) outputs: Vec<(String, NodeId)>,
}

/// Incrementally builds a [`Graph`]. Input/parameter names are deduplicated,
/// so reusing a name returns the existing node.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>) -> NodeId {
        for &i in &inputs {
            assert!(i < self.nodes.len(), "graph builder: input id {i} out of range");
        }
        self.nodes.push(Node { op, inputs });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            assert!(
                matches!(self.nodes[id].op, OpKind::Input(_)),
                "`{name}` already declared as a parameter"
            );
            return id;
        }
        let id = self.push(OpKind::Input(name.to_string()), vec![]);
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            assert!(
                matches!(self.nodes[id].op, OpKind::Param(_)),
                "`{name}` already declared as an input"
            );
            return id;
        }
        let id = self.push(OpKind::Param(name.to_string()), vec![]);
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Constant(value), vec![])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Div, vec![a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::MatMul, vec![a, b])
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> NodeId {
        assert!(!inputs.is_empty(), "concat of zero tensors");
        self.push(OpKind::Concat(axis), inputs.to_vec())
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        self.push(OpKind::Slice { axis, start, len }, vec![x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        self.push(OpKind::Reshape(shape.to_vec()), vec![x])
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Transpose, vec![x])
    }

    pub fn reverse_last(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::ReverseLast, vec![x])
    }

    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>) -> NodeId {
        self.push(OpKind::Gather(indices), vec![x])
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Exp, vec![x])
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Log, vec![x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Sqrt, vec![x])
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Softplus, vec![x])
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Silu, vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(OpKind::Relu, vec![x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: Real) -> NodeId {
        self.push(OpKind::LeakyRelu(slope), vec![x])
    }

    pub fn scale(&mut self, x: NodeId, factor: Real) -> NodeId {
        self.push(OpKind::Scale(factor), vec![x])
    }

    pub fn add_const(&mut self, x: NodeId, value: Real) -> NodeId {
        self.push(OpKind::AddConst(value), vec![x])
    }

    pub fn max_const(&mut self, x: NodeId, value: Real) -> NodeId {
        self.push(OpKind::MaxConst(value), vec![x])
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(OpKind::Softmax(axis), vec![x])
    }

    pub fn reduce_sum(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(OpKind::ReduceSum(axis), vec![x])
    }

    pub fn reduce_mean(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(OpKind::ReduceMean(axis), vec![x])
    }

    pub fn reduce_max(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(OpKind::ReduceMax(axis), vec![x])
    }

    pub fn reduce_min(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(OpKind::ReduceMin(axis), vec![x])
    }

    /// Cumulative recurrence along axis 0: `h_t = decay_t ⊙ h_{t-1} + drive_t`
    /// with `h_0 = 0`.
    pub fn scan(&mut self, decay: NodeId, drive: NodeId) -> NodeId {
        self.push(OpKind::Scan, vec![decay, drive])
    }

    /// Negate: scale by -1.
    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    /// Elementwise minimum with a constant, via `-max(-x, -c)`.
    pub fn min_const(&mut self, x: NodeId, value: Real) -> NodeId {
        let n = self.neg(x);
        let m = self.max_const(n, -value);
        self.neg(m)
    }

    pub fn output(&mut self, name: &str, id: NodeId) {
        assert!(
            self.outputs.iter().all(|(n, _)| n != name),
            "duplicate output name `{name}`"
        );
        self.outputs.push((name.to_string(), id));
    }

    pub fn finish(self) -> Graph {
        Graph { nodes: self.nodes, outputs: self.outputs }
    }
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Names of all leaf nodes (inputs and parameters), in node order.
    pub fn leaf_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                OpKind::Input(name) | OpKind::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Names of parameter leaves only.
    pub fn param_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                OpKind::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Evaluate every node and return the named outputs. Deterministic:
    /// identical bindings yield bit-identical results.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<BTreeMap<String, Tensor>, TensorError> {
        let values = self.run_forward(bindings)?;
        self.collect_outputs(&values)
    }

    pub(crate) fn collect_outputs(
        &self,
        values: &[Tensor],
    ) -> Result<BTreeMap<String, Tensor>, TensorError> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.outputs {
            out.insert(name.clone(), values[*id].clone());
        }
        Ok(out)
    }

    pub(crate) fn output_id(&self, name: &str) -> Result<NodeId, TensorError> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| TensorError::UnknownOutput(name.to_string()))
    }

    fn err(&self, node: NodeId, msg: String) -> TensorError {
        TensorError::Node { node, op: self.nodes[node].op.name().to_string(), msg }
    }

    pub(crate) fn run_forward(&self, bindings: &Bindings) -> Result<Vec<Tensor>, TensorError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let v = self.eval_node(id, node, &values, bindings)?;
            values.push(v);
        }
        Ok(values)
    }

    fn eval_node(
        &self,
        id: NodeId,
        node: &Node,
        values: &[Tensor],
        bindings: &Bindings,
    ) -> Result<Tensor, TensorError> {
        let arg = |i: usize| -> &Tensor { &values[node.inputs[i]] };
        match &node.op {
            OpKind::Input(name) | OpKind::Param(name) => bindings
                .get(name)
                .cloned()
                .ok_or_else(|| TensorError::UnboundInput(name.clone())),
            OpKind::Constant(t) => Ok(t.clone()),
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let (a, b) = (arg(0), arg(1));
                let shape = k::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                    self.err(id, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
                })?;
                let f: fn(Real, Real) -> Real = match node.op {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    OpKind::Mul => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                Ok(k::binary_broadcast(a, b, &shape, f))
            }
            OpKind::MatMul => {
                let (a, b) = (arg(0), arg(1));
                if a.shape().len() != 2 || b.shape().len() != 2 {
                    return Err(self.err(
                        id,
                        format!("expects two matrices, got {:?} and {:?}", a.shape(), b.shape()),
                    ));
                }
                if a.shape()[1] != b.shape()[0] {
                    return Err(self.err(
                        id,
                        format!("inner extents differ: {:?} × {:?}", a.shape(), b.shape()),
                    ));
                }
                Ok(k::matmul(a, b))
            }
            OpKind::Concat(axis) => {
                let tensors: Vec<&Tensor> = node.inputs.iter().map(|&i| &values[i]).collect();
                let rank = tensors[0].shape().len();
                if *axis >= rank {
                    return Err(self.err(id, format!("axis {axis} out of range for rank {rank}")));
                }
                for t in &tensors {
                    if t.shape().len() != rank {
                        return Err(self.err(id, "rank mismatch among concat inputs".into()));
                    }
                    for d in 0..rank {
                        if d != *axis && t.shape()[d] != tensors[0].shape()[d] {
                            return Err(self.err(
                                id,
                                format!(
                                    "extent mismatch on axis {d}: {:?} vs {:?}",
                                    t.shape(),
                                    tensors[0].shape()
                                ),
                            ));
                        }
                    }
                }
                let mut shape = tensors[0].shape().to_vec();
                shape[*axis] = tensors.iter().map(|t| t.shape()[*axis]).sum();
                let (outer, _, inner) = k::axis_split(&shape, *axis);
                let mut data = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for t in &tensors {
                        let ext = t.shape()[*axis];
                        let block = ext * inner;
                        data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                    }
                }
                Ok(Tensor::from_vec(&shape, data))
            }
            OpKind::Slice { axis, start, len } => {
                let x = arg(0);
                let rank = x.shape().len();
                if *axis >= rank || start + len > x.shape()[*axis] {
                    return Err(self.err(
                        id,
                        format!("range {start}..{} out of {:?} on axis {axis}", start + len, x.shape()),
                    ));
                }
                let (outer, ext, inner) = k::axis_split(x.shape(), *axis);
                let mut shape = x.shape().to_vec();
                shape[*axis] = *len;
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    data.extend_from_slice(&x.data()[base..base + len * inner]);
                }
                Ok(Tensor::from_vec(&shape, data))
            }
            OpKind::Reshape(shape) => {
                let x = arg(0);
                let numel: usize = shape.iter().product();
                if numel != x.numel() {
                    return Err(self.err(
                        id,
                        format!("cannot reshape {:?} into {:?}", x.shape(), shape),
                    ));
                }
                Ok(Tensor::from_vec(shape, x.data().to_vec()))
            }
            OpKind::Transpose => {
                let x = arg(0);
                if x.shape().len() != 2 {
                    return Err(self.err(id, format!("expects a matrix, got {:?}", x.shape())));
                }
                Ok(k::transpose2(x))
            }
            OpKind::ReverseLast => {
                let x = arg(0);
                if x.shape().is_empty() {
                    return Err(self.err(id, "scalar has no last axis".into()));
                }
                let last = *x.shape().last().unwrap();
                let mut data = x.data().to_vec();
                for row in data.chunks_exact_mut(last.max(1)) {
                    row.reverse();
                }
                Ok(Tensor::from_vec(x.shape(), data))
            }
            OpKind::Gather(indices) => {
                let x = arg(0);
                if x.shape().is_empty() {
                    return Err(self.err(id, "cannot gather from a scalar".into()));
                }
                let rows = x.shape()[0];
                let row_len = x.numel() / rows.max(1);
                if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
                    return Err(self.err(id, format!("index {bad} out of {rows} rows")));
                }
                let mut shape = x.shape().to_vec();
                shape[0] = indices.len();
                let mut data = Vec::with_capacity(indices.len() * row_len);
                for &i in indices {
                    data.extend_from_slice(&x.data()[i * row_len..(i + 1) * row_len]);
                }
                Ok(Tensor::from_vec(&shape, data))
            }
            OpKind::Exp => Ok(k::unary(arg(0), Real::exp)),
            OpKind::Log => Ok(k::unary(arg(0), Real::ln)),
            OpKind::Sqrt => Ok(k::unary(arg(0), Real::sqrt)),
            OpKind::Softplus => Ok(k::unary(arg(0), k::softplus)),
            OpKind::Silu => Ok(k::unary(arg(0), |x| x * k::sigmoid(x))),
            OpKind::Relu => Ok(k::unary(arg(0), |x| x.max(0.0))),
            OpKind::LeakyRelu(slope) => {
                let s = *slope;
                Ok(k::unary(arg(0), move |x| if x > 0.0 { x } else { s * x }))
            }
            OpKind::Scale(c) => {
                let c = *c;
                Ok(k::unary(arg(0), move |x| c * x))
            }
            OpKind::AddConst(c) => {
                let c = *c;
                Ok(k::unary(arg(0), move |x| x + c))
            }
            OpKind::MaxConst(c) => {
                let c = *c;
                Ok(k::unary(arg(0), move |x| x.max(c)))
            }
            OpKind::Softmax(axis) => {
                let x = arg(0);
                if *axis >= x.shape().len() {
                    return Err(self.err(id, format!("axis {axis} out of range for {:?}", x.shape())));
                }
                let (outer, ext, inner) = k::axis_split(x.shape(), *axis);
                let mut data = x.data().to_vec();
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        let mut max = Real::NEG_INFINITY;
                        for e in 0..ext {
                            max = max.max(data[base + e * inner]);
                        }
                        let mut sum = 0.0;
                        for e in 0..ext {
                            let v = (data[base + e * inner] - max).exp();
                            data[base + e * inner] = v;
                            sum += v;
                        }
                        for e in 0..ext {
                            data[base + e * inner] /= sum;
                        }
                    }
                }
                Ok(Tensor::from_vec(x.shape(), data))
            }
            OpKind::ReduceSum(axis) | OpKind::ReduceMean(axis) | OpKind::ReduceMax(axis)
            | OpKind::ReduceMin(axis) => {
                let x = arg(0);
                if *axis >= x.shape().len() {
                    return Err(self.err(id, format!("axis {axis} out of range for {:?}", x.shape())));
                }
                let (outer, ext, inner) = k::axis_split(x.shape(), *axis);
                if ext == 0 {
                    return Err(self.err(id, "reduction over an empty axis".into()));
                }
                let shape = k::reduced_shape(x.shape(), *axis);
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        let mut acc = match node.op {
                            OpKind::ReduceMax(_) => Real::NEG_INFINITY,
                            OpKind::ReduceMin(_) => Real::INFINITY,
                            _ => 0.0,
                        };
                        for e in 0..ext {
                            let v = x.data()[base + e * inner];
                            acc = match node.op {
                                OpKind::ReduceMax(_) => acc.max(v),
                                OpKind::ReduceMin(_) => acc.min(v),
                                _ => acc + v,
                            };
                        }
                        if matches!(node.op, OpKind::ReduceMean(_)) {
                            acc /= ext as Real;
                        }
                        data[o * inner + i] = acc;
                    }
                }
                Ok(Tensor::from_vec(&shape, data))
            }
            OpKind::Scan => {
                let (a, b) = (arg(0), arg(1));
                if a.shape() != b.shape() || a.shape().is_empty() {
                    return Err(self.err(
                        id,
                        format!("decay {:?} and drive {:?} must share a rank ≥ 1 shape", a.shape(), b.shape()),
                    ));
                }
                let steps = a.shape()[0];
                let ch = a.numel() / steps.max(1);
                let mut data = vec![0.0; a.numel()];
                let mut state = vec![0.0 as Real; ch];
                for t in 0..steps {
                    for c in 0..ch {
                        let i = t * ch + c;
                        state[c] = a.data()[i] * state[c] + b.data()[i];
                        data[i] = state[c];
                    }
                }
                Ok(Tensor::from_vec(a.shape(), data))
            }
        }
    }
}
