//! Central finite-difference validation of derived graphs.

use super::{Bindings, ComputeGraph, EvalError, GradientRequest, GraphError, NodeId, Tensor, Workspace};

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Compare `derive()` output against central finite differences.
///
/// Returns the maximum relative deviation over every component of every
/// requested leaf; an empty request yields 0. Relative error uses the floor
/// `max(|analytic|, |numeric|, 1e-6)` so exact zeros on both sides count as
/// agreement.
pub fn finite_difference_check(
    graph: &ComputeGraph,
    request: &GradientRequest,
    bindings: &Bindings,
    step: f64,
) -> Result<f64, CheckError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    if request.with_respect_to.is_empty() {
        return Ok(0.0);
    }

    let grad = graph.derive(request)?;
    let analytic = grad.evaluate(bindings)?;

    let mut ws = Workspace::new();
    let mut worst = 0.0f64;
    for (slot, &leaf) in request.with_respect_to.iter().enumerate() {
        let base = bindings
            .get(leaf)
            .ok_or_else(|| EvalError::UnboundLeaf(graph.leaves[leaf].name.clone()))?;
        for i in 0..base.data().len() {
            let mut plus = base.clone();
            plus.data_mut()[i] += step;
            let f_plus = eval_target(graph, bindings, leaf, &plus, request.target, &mut ws)?;
            let mut minus = base.clone();
            minus.data_mut()[i] -= step;
            let f_minus = eval_target(graph, bindings, leaf, &minus, request.target, &mut ws)?;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let exact = analytic[slot].data()[i];
            let denom = exact.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn eval_target(
    graph: &ComputeGraph,
    bindings: &Bindings,
    leaf: usize,
    replacement: &Tensor,
    target: NodeId,
    ws: &mut Workspace,
) -> Result<f64, EvalError> {
    let mut b = bindings.clone();
    b.bind(leaf, replacement);
    graph.evaluate_into(&b, ws)?;
    let vals = ws.node_values(target);
    // a bare leaf target has no materialized buffer; read the binding
    if vals.is_empty() {
        if let super::Op::Leaf(l) = graph.nodes[target].op {
            return Ok(b.get(l).expect("validated").data()[0]);
        }
    }
    Ok(vals[0])
}
