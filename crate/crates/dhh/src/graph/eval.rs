//! Graph evaluation against bound leaf values.

use super::{ComputeGraph, LeafId, NodeId, Op, Shape, Tensor};

/// Leaf values for one evaluation. Values are borrowed, never copied; a
/// `Bindings` built for one leaf table serves every graph derived from it.
#[derive(Clone)]
pub struct Bindings<'a> {
    slots: Vec<Option<&'a Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn new(leaf_count: usize) -> Self {
        Bindings { slots: vec![None; leaf_count] }
    }

    pub fn for_graph(graph: &ComputeGraph) -> Self {
        Self::new(graph.leaves().len())
    }

    pub fn bind(&mut self, leaf: LeafId, value: &'a Tensor) -> &mut Self {
        self.slots[leaf] = Some(value);
        self
    }

    pub fn get(&self, leaf: LeafId) -> Option<&'a Tensor> {
        self.slots.get(leaf).copied().flatten()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("leaf `{0}` is unbound")]
    UnboundLeaf(String),
    #[error("leaf `{name}`: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Shape,
        got: Shape,
    },
}

/// Per-evaluation scratch storage, one buffer per node. Reusing a workspace
/// across evaluations of the same graph avoids all allocation in hot loops.
/// A workspace is confined to one thread; distinct evaluations may run
/// concurrently on distinct workspaces.
#[derive(Default)]
pub struct Workspace {
    bufs: Vec<Vec<f64>>,
    fingerprint: (usize, usize),
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, g: &ComputeGraph) {
        let want = (g.nodes.len(), g.nodes.iter().map(|n| n.shape.len()).sum());
        if self.fingerprint == want && !self.bufs.is_empty() {
            return;
        }
        self.bufs = g
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                // leaf values are read from bindings; only leaves that are
                // graph outputs get a materialized buffer
                if matches!(n.op, Op::Leaf(_)) && !g.outputs.contains(&id) {
                    Vec::new()
                } else {
                    vec![0.0; n.shape.len()]
                }
            })
            .collect();
        self.fingerprint = want;
    }

    /// Values computed for node `id` during the last evaluation.
    pub fn node_values(&self, id: NodeId) -> &[f64] {
        &self.bufs[id]
    }

    /// Values of output `i` of `g` from the last evaluation.
    pub fn output<'s>(&'s self, g: &ComputeGraph, i: usize) -> &'s [f64] {
        &self.bufs[g.outputs[i]]
    }
}

impl ComputeGraph {
    /// Evaluate all nodes; repeated calls with equal bindings are bit-identical.
    pub fn evaluate_into(&self, bindings: &Bindings, ws: &mut Workspace) -> Result<(), EvalError> {
        // validate leaf bindings up front
        for entry in &self.nodes {
            if let Op::Leaf(l) = entry.op {
                let decl = &self.leaves[l];
                let t = bindings
                    .get(l)
                    .ok_or_else(|| EvalError::UnboundLeaf(decl.name.clone()))?;
                if t.shape() != decl.shape {
                    return Err(EvalError::ShapeMismatch {
                        name: decl.name.clone(),
                        expected: decl.shape,
                        got: t.shape(),
                    });
                }
            }
        }

        ws.prepare(self);
        for id in 0..self.nodes.len() {
            let (done, rest) = ws.bufs.split_at_mut(id);
            let out: &mut [f64] = &mut rest[0];
            let read = |a: NodeId| -> &[f64] {
                match self.nodes[a].op {
                    Op::Leaf(l) => bindings.get(l).expect("validated above").data(),
                    _ => &done[a],
                }
            };
            match &self.nodes[id].op {
                Op::Leaf(l) => {
                    // only materialized when the leaf is an output
                    if !out.is_empty() {
                        out.copy_from_slice(bindings.get(*l).expect("validated above").data());
                    }
                }
                Op::Const(t) => out.copy_from_slice(t.data()),
                Op::Add(a, b) => zip2(read(*a), read(*b), out, |x, y| x + y),
                Op::Sub(a, b) => zip2(read(*a), read(*b), out, |x, y| x - y),
                Op::Mul(a, b) => zip2(read(*a), read(*b), out, |x, y| x * y),
                Op::Div(a, b) => zip2(read(*a), read(*b), out, |x, y| x / y),
                Op::Neg(a) => map1(read(*a), out, |x| -x),
                Op::Powi(a, n) => {
                    let n = *n;
                    map1(read(*a), out, |x| x.powi(n))
                }
                Op::Tanh(a) => map1(read(*a), out, f64::tanh),
                Op::Sin(a) => map1(read(*a), out, f64::sin),
                Op::Cos(a) => map1(read(*a), out, f64::cos),
                Op::Square(a) => map1(read(*a), out, |x| x * x),
                Op::Scale(a, c) => {
                    let c = *c;
                    map1(read(*a), out, |x| c * x)
                }
                Op::Sum(a) => out[0] = read(*a).iter().sum(),
                Op::Broadcast(a, _) => out.fill(read(*a)[0]),
                Op::MatVec(m, v) => {
                    let (rows, cols) = match self.nodes[*m].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    matvec(read(*m), read(*v), out, rows, cols);
                }
                Op::MatVecT(m, v) => {
                    let (rows, cols) = match self.nodes[*m].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    matvec_t(read(*m), read(*v), out, rows, cols);
                }
                Op::Outer(a, b) => {
                    let (x, y) = (read(*a), read(*b));
                    for (r, &xr) in x.iter().enumerate() {
                        for (c, &yc) in y.iter().enumerate() {
                            out[r * y.len() + c] = xr * yc;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let src = read(p);
                        out[offset..offset + src.len()].copy_from_slice(src);
                        offset += src.len();
                    }
                }
                Op::Slice(a, start, end) => out.copy_from_slice(&read(*a)[*start..*end]),
            }
        }
        Ok(())
    }

    /// Convenience evaluation returning the output tensors.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<Vec<Tensor>, EvalError> {
        let mut ws = Workspace::new();
        self.evaluate_into(bindings, &mut ws)?;
        Ok(self
            .outputs
            .iter()
            .enumerate()
            .map(|(i, &id)| Tensor::new(self.nodes[id].shape, ws.output(self, i).to_vec()))
            .collect())
    }
}

#[inline]
fn map1(a: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(a) {
        *o = f(x);
    }
}

#[inline]
fn zip2(a: &[f64], b: &[f64], out: &mut [f64], f: impl Fn(f64, f64) -> f64) {
    debug_assert!(a.len() == b.len() && a.len() == out.len());
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

#[inline]
fn matvec(m: &[f64], x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(m.len(), rows * cols);
    for r in 0..rows {
        out[r] = dot(&m[r * cols..(r + 1) * cols], x);
    }
}

#[inline]
fn matvec_t(m: &[f64], x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(m.len(), rows * cols);
    out.fill(0.0);
    for r in 0..rows {
        let xr = x[r];
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &mc) in out.iter_mut().zip(row) {
            *o += xr * mc;
        }
    }
}

/// Four-lane dot product; the fixed association order keeps results
/// bit-identical across calls.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + tail
}
