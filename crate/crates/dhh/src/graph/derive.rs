//! Reverse-mode differentiation as a graph-to-graph transformation.

use super::{
    ComputeGraph, GradientRequest, GraphBuilder, GraphError, NodeEntry, NodeId, Op, Shape, Tensor,
};

impl ComputeGraph {
    /// Build a new graph computing the derivatives named by `request`.
    ///
    /// The returned graph declares the same leaf slots as `self` and has one
    /// output per requested leaf, shape-matched to that leaf. Because every
    /// adjoint is expressed with registered primitives, the result supports a
    /// second `derive` call; that is the property joint training relies on.
    pub fn derive(&self, request: &GradientRequest) -> Result<ComputeGraph, GraphError> {
        let mut builder = GraphBuilder {
            leaves: self.leaves.clone(),
            nodes: self.nodes.clone(),
            leaf_nodes: self.leaf_nodes.clone(),
        };
        let wrt_nodes: Vec<NodeId> = request
            .with_respect_to
            .iter()
            .map(|&leaf| builder.use_leaf(leaf))
            .collect();
        let grads = append_adjoints(&mut builder, request.target, &wrt_nodes)?;
        Ok(builder.finish(grads))
    }

    /// Like [`derive`](Self::derive) but keeps the differentiated value as the
    /// first output, ahead of the per-leaf derivatives.
    pub fn derive_keeping_value(
        &self,
        request: &GradientRequest,
    ) -> Result<ComputeGraph, GraphError> {
        let mut builder = GraphBuilder {
            leaves: self.leaves.clone(),
            nodes: self.nodes.clone(),
            leaf_nodes: self.leaf_nodes.clone(),
        };
        let wrt_nodes: Vec<NodeId> = request
            .with_respect_to
            .iter()
            .map(|&leaf| builder.use_leaf(leaf))
            .collect();
        let mut outputs = vec![request.target];
        outputs.extend(append_adjoints(&mut builder, request.target, &wrt_nodes)?);
        Ok(builder.finish(outputs))
    }
}

/// Append adjoint nodes for `d target / d wrt[i]` to `b` and return their ids.
///
/// Sweeps the existing nodes in reverse topological order, accumulating each
/// node's adjoint from the adjoints of its consumers. Nodes appended during
/// the sweep never feed `target`, so only the pre-existing prefix is visited.
pub(super) fn append_adjoints(
    b: &mut GraphBuilder,
    target: NodeId,
    wrt: &[NodeId],
) -> Result<Vec<NodeId>, GraphError> {
    let target_shape = b.shape(target);
    if target_shape != Shape::Scalar {
        return Err(GraphError::NonScalarTarget(target_shape));
    }

    let prefix = b.nodes().len();
    let mut adjoint: Vec<Option<NodeId>> = vec![None; prefix];
    adjoint[target] = Some(b.scalar(1.0));

    for id in (0..=target).rev() {
        let up = match adjoint[id] {
            Some(a) => a,
            None => continue,
        };
        let op = b.nodes()[id].op.clone();
        match op {
            Op::Leaf(_) | Op::Const(_) => {}
            Op::Add(x, y) => {
                accumulate(b, &mut adjoint, x, up);
                accumulate(b, &mut adjoint, y, up);
            }
            Op::Sub(x, y) => {
                accumulate(b, &mut adjoint, x, up);
                let n = b.neg(up);
                accumulate(b, &mut adjoint, y, n);
            }
            Op::Mul(x, y) => {
                let gx = b.mul(up, y);
                accumulate(b, &mut adjoint, x, gx);
                let gy = b.mul(up, x);
                accumulate(b, &mut adjoint, y, gy);
            }
            Op::Div(x, y) => {
                // d(x/y): dx -> u/y, dy -> -u*x/y^2
                let gx = b.div(up, y);
                accumulate(b, &mut adjoint, x, gx);
                let ux = b.mul(up, x);
                let yy = b.square(y);
                let q = b.div(ux, yy);
                let gy = b.neg(q);
                accumulate(b, &mut adjoint, y, gy);
            }
            Op::Neg(x) => {
                let g = b.neg(up);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Powi(x, n) => {
                if n != 0 {
                    let pw = b.powi(x, n - 1);
                    let scaled = b.scale(pw, n as f64);
                    let g = b.mul(up, scaled);
                    accumulate(b, &mut adjoint, x, g);
                }
            }
            Op::Tanh(x) => {
                // derivative 1 - tanh(x)^2, reusing the primal tanh node
                let ones = b.constant(Tensor::ones(b.shape(id)));
                let sq = b.square(id);
                let d = b.sub(ones, sq);
                let g = b.mul(up, d);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Sin(x) => {
                let c = b.cos(x);
                let g = b.mul(up, c);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Cos(x) => {
                let s = b.sin(x);
                let ms = b.neg(s);
                let g = b.mul(up, ms);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Square(x) => {
                let two_x = b.scale(x, 2.0);
                let g = b.mul(up, two_x);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Scale(x, c) => {
                let g = b.scale(up, c);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Sum(x) => {
                let n = b.shape(x).len();
                let g = b.broadcast(up, n);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::Broadcast(x, _) => {
                let g = b.sum(up);
                accumulate(b, &mut adjoint, x, g);
            }
            Op::MatVec(m, v) => {
                // y = M v: dM -> u ⊗ v, dv -> M^T u
                let gm = b.outer(up, v);
                accumulate(b, &mut adjoint, m, gm);
                let gv = b.matvec_t(m, up);
                accumulate(b, &mut adjoint, v, gv);
            }
            Op::MatVecT(m, v) => {
                // y = M^T v: dM -> v ⊗ u, dv -> M u
                let gm = b.outer(v, up);
                accumulate(b, &mut adjoint, m, gm);
                let gv = b.matvec(m, up);
                accumulate(b, &mut adjoint, v, gv);
            }
            Op::Outer(x, y) => {
                // Y = x y^T: dx -> U y, dy -> U^T x
                let gx = b.matvec(up, y);
                accumulate(b, &mut adjoint, x, gx);
                let gy = b.matvec_t(up, x);
                accumulate(b, &mut adjoint, y, gy);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in &parts {
                    let len = b.shape(p).len();
                    let g = b.slice(up, offset, offset + len);
                    accumulate(b, &mut adjoint, p, g);
                    offset += len;
                }
            }
            Op::Slice(x, start, end) => {
                // scatter back: zeros around the upstream slice
                let n = b.shape(x).len();
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    parts.push(b.constant(Tensor::zeros(Shape::Vector(start))));
                }
                parts.push(up);
                if end < n {
                    parts.push(b.constant(Tensor::zeros(Shape::Vector(n - end))));
                }
                let g = b.concat(&parts);
                accumulate(b, &mut adjoint, x, g);
            }
        }
    }

    Ok(wrt
        .iter()
        .map(|&w| match adjoint.get(w).copied().flatten() {
            Some(a) => a,
            None => b.constant(Tensor::zeros(b.shape(w))),
        })
        .collect())
}

fn accumulate(
    b: &mut GraphBuilder,
    adjoint: &mut [Option<NodeId>],
    node: NodeId,
    contribution: NodeId,
) {
    adjoint[node] = Some(match adjoint[node] {
        None => contribution,
        Some(prev) => b.add(prev, contribution),
    });
}

/// Drop nodes unreachable from the outputs, preserving relative order
/// (hence topological validity) and leaf declarations.
pub(super) fn prune(g: ComputeGraph) -> ComputeGraph {
    let mut live = vec![false; g.nodes.len()];
    let mut stack: Vec<NodeId> = g.outputs.clone();
    while let Some(id) = stack.pop() {
        if live[id] {
            continue;
        }
        live[id] = true;
        stack.extend(g.nodes[id].op.inputs());
    }

    let mut remap = vec![usize::MAX; g.nodes.len()];
    let mut nodes: Vec<NodeEntry> = Vec::with_capacity(live.iter().filter(|&&l| l).count());
    for (id, entry) in g.nodes.iter().enumerate() {
        if live[id] {
            remap[id] = nodes.len();
            nodes.push(NodeEntry {
                op: entry.op.remap(|i| remap[i]),
                shape: entry.shape,
            });
        }
    }

    let leaf_nodes = g
        .leaf_nodes
        .iter()
        .map(|ln| ln.filter(|&id| live[id]).map(|id| remap[id]))
        .collect();

    ComputeGraph {
        leaves: g.leaves,
        nodes,
        leaf_nodes,
        outputs: g.outputs.iter().map(|&o| remap[o]).collect(),
    }
}
