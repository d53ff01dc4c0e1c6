//! Differentiable computation graphs.
//!
//! A [`ComputeGraph`] is an immutable, topologically ordered list of primitive
//! operations over scalars, vectors and matrices. Differentiation is a source
//! transformation: [`ComputeGraph::derive`] returns a *new* graph that computes
//! the requested derivatives using only registered primitives, so the result
//! can be differentiated again. That closure property is what allows losses
//! containing input-derivatives of networks to be differentiated with respect
//! to network parameters.

mod check;
mod derive;
mod eval;

pub use check::finite_difference_check;
pub use eval::{Bindings, EvalError, Workspace};

use std::collections::HashMap;

/// Index of a node within a graph's topological order.
pub type NodeId = usize;
/// Index of a declared leaf slot (parameter or input).
pub type LeafId = usize;

/// Shape of a value flowing through the graph. Data is stored flat,
/// matrices in row-major order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense value with an attached shape.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len(), "tensor data does not match shape");
        Tensor { shape, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: Shape::Scalar, data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: Shape::Vector(data.len()), data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(Shape::Matrix(rows, cols), data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.len()] }
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor { shape, data: vec![1.0; shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a scalar tensor.
    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.shape, Shape::Scalar, "not a scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Primitive operations. The set is closed under differentiation: the adjoint
/// of every primitive is expressed with primitives from this same set.
#[derive(Clone, Debug)]
pub enum Op {
    /// Reference to a declared leaf slot.
    Leaf(LeafId),
    /// Constant baked into the graph.
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    /// Integer power, with `x^0 == 1` everywhere.
    Powi(NodeId, i32),
    Tanh(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Square(NodeId),
    /// Multiplication by a compile-time constant.
    Scale(NodeId, f64),
    /// Reduce a vector to the sum of its components.
    Sum(NodeId),
    /// Repeat a scalar into a vector of the given length.
    Broadcast(NodeId, usize),
    /// `A x` for a matrix `A` and vector `x`.
    MatVec(NodeId, NodeId),
    /// `A^T x`.
    MatVecT(NodeId, NodeId),
    /// Outer product of two vectors.
    Outer(NodeId, NodeId),
    Concat(Vec<NodeId>),
    /// Contiguous sub-vector `[start, end)`.
    Slice(NodeId, usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf(_) | Op::Const(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatVec(a, b)
            | Op::MatVecT(a, b)
            | Op::Outer(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Powi(a, _)
            | Op::Tanh(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Square(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Broadcast(a, _)
            | Op::Slice(a, _, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    fn remap(&self, f: impl Fn(NodeId) -> NodeId) -> Op {
        match self {
            Op::Leaf(l) => Op::Leaf(*l),
            Op::Const(t) => Op::Const(t.clone()),
            Op::Add(a, b) => Op::Add(f(*a), f(*b)),
            Op::Sub(a, b) => Op::Sub(f(*a), f(*b)),
            Op::Mul(a, b) => Op::Mul(f(*a), f(*b)),
            Op::Div(a, b) => Op::Div(f(*a), f(*b)),
            Op::Neg(a) => Op::Neg(f(*a)),
            Op::Powi(a, n) => Op::Powi(f(*a), *n),
            Op::Tanh(a) => Op::Tanh(f(*a)),
            Op::Sin(a) => Op::Sin(f(*a)),
            Op::Cos(a) => Op::Cos(f(*a)),
            Op::Square(a) => Op::Square(f(*a)),
            Op::Scale(a, c) => Op::Scale(f(*a), *c),
            Op::Sum(a) => Op::Sum(f(*a)),
            Op::Broadcast(a, n) => Op::Broadcast(f(*a), *n),
            Op::MatVec(a, b) => Op::MatVec(f(*a), f(*b)),
            Op::MatVecT(a, b) => Op::MatVecT(f(*a), f(*b)),
            Op::Outer(a, b) => Op::Outer(f(*a), f(*b)),
            Op::Concat(parts) => Op::Concat(parts.iter().map(|&p| f(p)).collect()),
            Op::Slice(a, s, e) => Op::Slice(f(*a), *s, *e),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct NodeEntry {
    pub op: Op,
    pub shape: Shape,
}

/// Declared leaf slot: a named parameter or input of fixed shape.
#[derive(Clone, Debug)]
pub struct LeafDecl {
    pub name: String,
    pub shape: Shape,
}

/// Errors arising while constructing or transforming graphs.
#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("gradient target must be scalar, found {0:?}")]
    NonScalarTarget(Shape),
    #[error("leaf `{0}` is not mapped when splicing")]
    UnmappedLeaf(String),
    #[error("no derivative registered for primitive `{0}`")]
    UnregisteredDerivative(&'static str),
}

/// A derivative request: the scalar node to differentiate and the leaf slots
/// to differentiate with respect to. The resulting graph has one output per
/// requested leaf, shape-matched to that leaf.
#[derive(Clone, Debug)]
pub struct GradientRequest {
    pub target: NodeId,
    pub with_respect_to: Vec<LeafId>,
}

/// Immutable computation graph in topological order.
#[derive(Clone, Debug)]
pub struct ComputeGraph {
    pub(crate) leaves: Vec<LeafDecl>,
    pub(crate) nodes: Vec<NodeEntry>,
    pub(crate) leaf_nodes: Vec<Option<NodeId>>,
    pub(crate) outputs: Vec<NodeId>,
}

impl ComputeGraph {
    pub fn leaves(&self) -> &[LeafDecl] {
        &self.leaves
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn output_shape(&self, i: usize) -> Shape {
        self.nodes[self.outputs[i]].shape
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    /// Leaf slot by name, if declared.
    pub fn leaf_by_name(&self, name: &str) -> Option<LeafId> {
        self.leaves.iter().position(|l| l.name == name)
    }
}

/// Mapping target for one leaf of a spliced subgraph.
#[derive(Clone, Copy, Debug)]
pub enum SpliceSrc {
    /// Substitute an existing node of the host builder.
    Node(NodeId),
    /// Identify with a leaf of the host builder.
    Leaf(LeafId),
}

/// Incremental graph constructor. Node methods check shapes eagerly and
/// panic on violations; those are programming errors, not runtime inputs.
#[derive(Default)]
pub struct GraphBuilder {
    leaves: Vec<LeafDecl>,
    nodes: Vec<NodeEntry>,
    leaf_nodes: Vec<Option<NodeId>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a leaf slot. The slot gets a node on first use.
    pub fn leaf(&mut self, name: impl Into<String>, shape: Shape) -> LeafId {
        self.leaves.push(LeafDecl { name: name.into(), shape });
        self.leaf_nodes.push(None);
        self.leaves.len() - 1
    }

    /// Node referring to a leaf slot; each slot has exactly one node.
    pub fn use_leaf(&mut self, leaf: LeafId) -> NodeId {
        if let Some(id) = self.leaf_nodes[leaf] {
            return id;
        }
        let shape = self.leaves[leaf].shape;
        let id = self.push(Op::Leaf(leaf), shape);
        self.leaf_nodes[leaf] = Some(id);
        id
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        self.nodes.push(NodeEntry { op, shape });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape();
        self.push(Op::Const(t), shape)
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.constant(Tensor::scalar(x))
    }

    fn binary_elementwise(&mut self, what: &str, a: NodeId, b: NodeId) -> Shape {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
        sa
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.binary_elementwise("add", a, b);
        self.push(Op::Add(a, b), s)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.binary_elementwise("sub", a, b);
        self.push(Op::Sub(a, b), s)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.binary_elementwise("mul", a, b);
        self.push(Op::Mul(a, b), s)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.binary_elementwise("div", a, b);
        self.push(Op::Div(a, b), s)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Neg(a), s)
    }

    pub fn powi(&mut self, a: NodeId, n: i32) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Powi(a, n), s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Tanh(a), s)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Sin(a), s)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Cos(a), s)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Square(a), s)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Scale(a, c), s)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        match self.shape(a) {
            Shape::Vector(_) => self.push(Op::Sum(a), Shape::Scalar),
            other => panic!("sum expects a vector, found {other:?}"),
        }
    }

    pub fn broadcast(&mut self, a: NodeId, n: usize) -> NodeId {
        assert_eq!(self.shape(a), Shape::Scalar, "broadcast expects a scalar");
        self.push(Op::Broadcast(a, n), Shape::Vector(n))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        match (self.shape(m), self.shape(v)) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => {
                self.push(Op::MatVec(m, v), Shape::Vector(r))
            }
            (sm, sv) => panic!("matvec: incompatible shapes {sm:?}, {sv:?}"),
        }
    }

    pub fn matvec_t(&mut self, m: NodeId, v: NodeId) -> NodeId {
        match (self.shape(m), self.shape(v)) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if r == n => {
                self.push(Op::MatVecT(m, v), Shape::Vector(c))
            }
            (sm, sv) => panic!("matvec_t: incompatible shapes {sm:?}, {sv:?}"),
        }
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.shape(a), self.shape(b)) {
            (Shape::Vector(r), Shape::Vector(c)) => self.push(Op::Outer(a, b), Shape::Matrix(r, c)),
            (sa, sb) => panic!("outer: expects vectors, found {sa:?}, {sb:?}"),
        }
    }

    /// Concatenate vectors; scalar parts are treated as length-1 vectors.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut vec_parts = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let p = match self.shape(p) {
                Shape::Scalar => self.broadcast(p, 1),
                Shape::Vector(_) => p,
                other => panic!("concat expects scalars or vectors, found {other:?}"),
            };
            total += self.shape(p).len();
            vec_parts.push(p);
        }
        self.push(Op::Concat(vec_parts), Shape::Vector(total))
    }

    pub fn slice(&mut self, v: NodeId, start: usize, end: usize) -> NodeId {
        match self.shape(v) {
            Shape::Vector(n) => {
                assert!(start < end && end <= n, "slice [{start}, {end}) out of 0..{n}");
                self.push(Op::Slice(v, start, end), Shape::Vector(end - start))
            }
            other => panic!("slice expects a vector, found {other:?}"),
        }
    }

    /// Component `i` of a vector node, as a scalar.
    pub fn component(&mut self, v: NodeId, i: usize) -> NodeId {
        let s = self.slice(v, i, i + 1);
        self.sum(s)
    }

    /// Mean of a vector's components.
    pub fn mean(&mut self, v: NodeId) -> NodeId {
        let n = match self.shape(v) {
            Shape::Vector(n) => n,
            other => panic!("mean expects a vector, found {other:?}"),
        };
        let s = self.sum(v);
        self.scale(s, 1.0 / n as f64)
    }

    /// Squared Euclidean norm of a vector node.
    pub fn squared_norm(&mut self, v: NodeId) -> NodeId {
        let sq = self.square(v);
        self.sum(sq)
    }

    /// Copy the nodes of `g` into this builder, substituting its leaves
    /// according to `leaf_map`. Returns the translated output node ids.
    pub fn splice(
        &mut self,
        g: &ComputeGraph,
        leaf_map: &HashMap<LeafId, SpliceSrc>,
    ) -> Result<Vec<NodeId>, GraphError> {
        let mut translate = vec![usize::MAX; g.nodes.len()];
        for (id, entry) in g.nodes.iter().enumerate() {
            let new_id = match &entry.op {
                Op::Leaf(l) => match leaf_map.get(l) {
                    Some(SpliceSrc::Node(n)) => {
                        assert_eq!(
                            self.shape(*n),
                            entry.shape,
                            "splice: node bound to leaf `{}` has the wrong shape",
                            g.leaves[*l].name
                        );
                        *n
                    }
                    Some(SpliceSrc::Leaf(host_leaf)) => {
                        assert_eq!(
                            self.leaves[*host_leaf].shape,
                            entry.shape,
                            "splice: host leaf bound to `{}` has the wrong shape",
                            g.leaves[*l].name
                        );
                        self.use_leaf(*host_leaf)
                    }
                    None => return Err(GraphError::UnmappedLeaf(g.leaves[*l].name.clone())),
                },
                op => {
                    let remapped = op.remap(|i| translate[i]);
                    self.push(remapped, entry.shape)
                }
            };
            translate[id] = new_id;
        }
        Ok(g.outputs.iter().map(|&o| translate[o]).collect())
    }

    /// Append adjoint nodes computing `d target / d wrt[i]` for each entry of
    /// `wrt` and return their node ids. Reverse-mode; see [`ComputeGraph::derive`].
    pub fn gradients_of(
        &mut self,
        target: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>, GraphError> {
        derive::append_adjoints(self, target, wrt)
    }

    pub(crate) fn nodes(&self) -> &[NodeEntry] {
        &self.nodes
    }

    /// Freeze into an immutable graph with the given outputs. Nodes that do
    /// not feed an output are dropped; leaf declarations are kept verbatim so
    /// leaf ids remain stable across derived graphs.
    pub fn finish(self, outputs: Vec<NodeId>) -> ComputeGraph {
        let graph = ComputeGraph {
            leaves: self.leaves,
            nodes: self.nodes,
            leaf_nodes: self.leaf_nodes,
            outputs,
        };
        derive::prune(graph)
    }
}

#[cfg(test)]
mod tests;
