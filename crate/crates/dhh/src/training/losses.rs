//! Objective graphs and per-sample loss terms.
//!
//! Every term is built once as a compute graph over one sample (one
//! observation, one collocation time, or one time pair) together with its
//! parameter gradients; training means evaluating these graphs over fresh
//! samples and averaging. Time derivatives of the solution network are taken
//! in normalized time and rescaled inside the residual, so the learned
//! dynamics live in raw time units.

use std::collections::HashMap;

use rand::Rng;

use crate::data::Dataset;
use crate::graph::{
    Bindings, ComputeGraph, GraphBuilder, GraphError, LeafId, NodeId, Shape, Tensor, Workspace,
};
use crate::nets::{apply_mlp, declare_mlp_leaves, MlpConfig, Network};

use super::TrainError;

/// Which differential residual the solution network is matched against.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum ResidualKind {
    /// Hamilton's equations through a learned energy.
    Hamiltonian,
    /// A learned black-box vector field.
    BlackBox,
}

/// Shared leaf layout for the joint solution/partner objectives. Declaring
/// the same slots in the same order in every builder lets one `Bindings`
/// serve all graphs of the objective.
pub(crate) struct LossLayout {
    pub sol: Vec<LeafId>,
    pub partner: Vec<LeafId>,
    pub tau: LeafId,
    pub tau_j: LeafId,
    pub obs: LeafId,
    pub leaf_count: usize,
}

fn declare_layout(
    b: &mut GraphBuilder,
    sol_config: &MlpConfig,
    partner_config: &MlpConfig,
) -> LossLayout {
    let sol = declare_mlp_leaves(b, "solution", sol_config);
    let partner = declare_mlp_leaves(b, "partner", partner_config);
    let tau = b.leaf("tau", Shape::Vector(1));
    let tau_j = b.leaf("tau_j", Shape::Vector(1));
    let obs = b.leaf("obs", Shape::Vector(sol_config.output_dim));
    LossLayout { sol, partner, tau, tau_j, obs, leaf_count: b.leaf_count() }
}

/// Squared masked distance between the solution at `tau` and the observation.
fn fit_loss_node(b: &mut GraphBuilder, layout: &LossLayout, sol_config: &MlpConfig, mask: &[bool]) -> NodeId {
    let tau = b.use_leaf(layout.tau);
    let s = apply_mlp(b, sol_config, &layout.sol, tau);
    let obs = b.use_leaf(layout.obs);
    let r = b.sub(s, obs);
    let mask_t = Tensor::vector(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect());
    let mask_c = b.constant(mask_t);
    let masked = b.mul(r, mask_c);
    b.squared_norm(masked)
}

/// Differential residual at one collocation time: the solution network's
/// raw-time derivative against the partner's vector field.
fn residual_loss_node(
    b: &mut GraphBuilder,
    layout: &LossLayout,
    sol_config: &MlpConfig,
    partner_config: &MlpConfig,
    kind: ResidualKind,
    time_scale: f64,
) -> Result<NodeId, GraphError> {
    let dim2 = sol_config.output_dim;
    let d = dim2 / 2;
    let tau = b.use_leaf(layout.tau);
    let s = apply_mlp(b, sol_config, &layout.sol, tau);

    // ds/dtau, one reverse sweep per state coordinate
    let mut rows = Vec::with_capacity(dim2);
    for i in 0..dim2 {
        let ci = b.component(s, i);
        rows.push(b.gradients_of(ci, &[tau])?[0]);
    }
    let ds_dtau = b.concat(&rows);
    let ds_dt = b.scale(ds_dtau, time_scale);

    Ok(match kind {
        ResidualKind::Hamiltonian => {
            let h_out = apply_mlp(b, partner_config, &layout.partner, s);
            let h = b.sum(h_out);
            let grad_h = b.gradients_of(h, &[s])?[0];
            let dq_dt = b.slice(ds_dt, 0, d);
            let dp_dt = b.slice(ds_dt, d, dim2);
            let h_q = b.slice(grad_h, 0, d);
            let h_p = b.slice(grad_h, d, dim2);
            let r_q = b.sub(dq_dt, h_p);
            let r_p = b.add(dp_dt, h_q);
            let n_q = b.squared_norm(r_q);
            let n_p = b.squared_norm(r_p);
            b.add(n_q, n_p)
        }
        ResidualKind::BlackBox => {
            let f_out = apply_mlp(b, partner_config, &layout.partner, s);
            let r = b.sub(ds_dt, f_out);
            b.squared_norm(r)
        }
    })
}

/// Squared energy difference between the solution states at two times.
fn extra_loss_node(
    b: &mut GraphBuilder,
    layout: &LossLayout,
    sol_config: &MlpConfig,
    partner_config: &MlpConfig,
) -> NodeId {
    let tau_i = b.use_leaf(layout.tau);
    let tau_j = b.use_leaf(layout.tau_j);
    let s_i = apply_mlp(b, sol_config, &layout.sol, tau_i);
    let s_j = apply_mlp(b, sol_config, &layout.sol, tau_j);
    let h_i_out = apply_mlp(b, partner_config, &layout.partner, s_i);
    let h_j_out = apply_mlp(b, partner_config, &layout.partner, s_j);
    let h_i = b.sum(h_i_out);
    let h_j = b.sum(h_j_out);
    let diff = b.sub(h_i, h_j);
    b.square(diff)
}

/// The per-sample graphs of a joint solution/partner objective, each with the
/// loss value as output 0 followed by parameter gradients (solution first,
/// then partner).
pub(crate) struct SolverGraphs {
    pub layout: LossLayout,
    pub fit: ComputeGraph,
    pub residual: ComputeGraph,
    pub extra: Option<ComputeGraph>,
}

pub(crate) fn build_solver_graphs(
    sol_config: &MlpConfig,
    partner_config: &MlpConfig,
    kind: ResidualKind,
    mask: &[bool],
    time_scale: f64,
    with_extra: bool,
) -> Result<SolverGraphs, GraphError> {
    let fit = {
        let mut b = GraphBuilder::new();
        let layout = declare_layout(&mut b, sol_config, partner_config);
        let loss = fit_loss_node(&mut b, &layout, sol_config, mask);
        let sol_nodes: Vec<NodeId> = layout.sol.iter().map(|&l| b.use_leaf(l)).collect();
        let mut outputs = vec![loss];
        outputs.extend(b.gradients_of(loss, &sol_nodes)?);
        b.finish(outputs)
    };
    let residual = {
        let mut b = GraphBuilder::new();
        let layout = declare_layout(&mut b, sol_config, partner_config);
        let loss = residual_loss_node(&mut b, &layout, sol_config, partner_config, kind, time_scale)?;
        let mut nodes: Vec<NodeId> = layout.sol.iter().map(|&l| b.use_leaf(l)).collect();
        nodes.extend(layout.partner.iter().map(|&l| b.use_leaf(l)));
        let mut outputs = vec![loss];
        outputs.extend(b.gradients_of(loss, &nodes)?);
        b.finish(outputs)
    };
    let extra = if with_extra {
        let mut b = GraphBuilder::new();
        let layout = declare_layout(&mut b, sol_config, partner_config);
        let loss = extra_loss_node(&mut b, &layout, sol_config, partner_config);
        let mut nodes: Vec<NodeId> = layout.sol.iter().map(|&l| b.use_leaf(l)).collect();
        nodes.extend(layout.partner.iter().map(|&l| b.use_leaf(l)));
        let mut outputs = vec![loss];
        outputs.extend(b.gradients_of(loss, &nodes)?);
        Some(b.finish(outputs))
    } else {
        None
    };
    let mut b = GraphBuilder::new();
    let layout = declare_layout(&mut b, sol_config, partner_config);
    Ok(SolverGraphs { layout, fit, residual, extra })
}

/// Per-sample graph for training a Hamiltonian network against supplied
/// state-derivative targets (finite differences or the simulator).
pub(crate) struct TargetGraphs {
    pub ham: Vec<LeafId>,
    pub state: LeafId,
    pub target: LeafId,
    pub leaf_count: usize,
    pub loss: ComputeGraph,
}

pub(crate) fn build_target_graphs(ham_config: &MlpConfig) -> Result<TargetGraphs, GraphError> {
    let dim2 = ham_config.input_dim;
    let d = dim2 / 2;
    let mut b = GraphBuilder::new();
    let ham = declare_mlp_leaves(&mut b, "hamiltonian", ham_config);
    let state = b.leaf("state", Shape::Vector(dim2));
    let target = b.leaf("target", Shape::Vector(dim2));
    let leaf_count = b.leaf_count();

    let state_node = b.use_leaf(state);
    let h_out = apply_mlp(&mut b, ham_config, &ham, state_node);
    let h = b.sum(h_out);
    let grad_h = b.gradients_of(h, &[state_node])?[0];
    let h_q = b.slice(grad_h, 0, d);
    let h_p = b.slice(grad_h, d, dim2);
    let target_node = b.use_leaf(target);
    let t_q = b.slice(target_node, 0, d);
    let t_p = b.slice(target_node, d, dim2);
    let r_q = b.sub(t_q, h_p);
    let r_p = b.add(t_p, h_q);
    let n_q = b.squared_norm(r_q);
    let n_p = b.squared_norm(r_p);
    let loss = b.add(n_q, n_p);

    let ham_nodes: Vec<NodeId> = ham.iter().map(|&l| b.use_leaf(l)).collect();
    let mut outputs = vec![loss];
    outputs.extend(b.gradients_of(loss, &ham_nodes)?);
    Ok(TargetGraphs { ham, state, target, leaf_count, loss: b.finish(outputs) })
}

/// Per-pair graphs for one-step prediction through an unrolled midpoint
/// integrator, keyed by sub-step count.
pub(crate) struct UnrolledGraphs {
    pub dynamics: Vec<LeafId>,
    pub start: LeafId,
    pub target: LeafId,
    pub substep: LeafId,
    pub leaf_count: usize,
    pub by_substeps: HashMap<usize, ComputeGraph>,
}

pub(crate) fn build_unrolled_graphs(
    dyn_config: &MlpConfig,
    substep_counts: impl IntoIterator<Item = usize>,
) -> Result<UnrolledGraphs, GraphError> {
    let dim2 = dyn_config.input_dim;
    let mut template = None;
    let mut by_substeps = HashMap::new();
    for k in substep_counts {
        let mut b = GraphBuilder::new();
        let dynamics = declare_mlp_leaves(&mut b, "dynamics", dyn_config);
        let start = b.leaf("start", Shape::Vector(dim2));
        let target = b.leaf("target", Shape::Vector(dim2));
        let substep = b.leaf("substep", Shape::Scalar);
        let leaf_count = b.leaf_count();

        let h = b.use_leaf(substep);
        let half = b.scale(h, 0.5);
        let h_vec = b.broadcast(h, dim2);
        let half_vec = b.broadcast(half, dim2);
        let mut s = b.use_leaf(start);
        for _ in 0..k {
            let k1 = apply_mlp(&mut b, dyn_config, &dynamics, s);
            let inc1 = b.mul(half_vec, k1);
            let mid = b.add(s, inc1);
            let k2 = apply_mlp(&mut b, dyn_config, &dynamics, mid);
            let inc2 = b.mul(h_vec, k2);
            s = b.add(s, inc2);
        }
        let target_node = b.use_leaf(target);
        let r = b.sub(s, target_node);
        let loss = b.squared_norm(r);

        let dyn_nodes: Vec<NodeId> = dynamics.iter().map(|&l| b.use_leaf(l)).collect();
        let mut outputs = vec![loss];
        outputs.extend(b.gradients_of(loss, &dyn_nodes)?);
        by_substeps.insert(k, b.finish(outputs));
        template.get_or_insert((dynamics, start, target, substep, leaf_count));
    }
    let (dynamics, start, target, substep, leaf_count) =
        template.expect("at least one sub-step count");
    Ok(UnrolledGraphs { dynamics, start, target, substep, leaf_count, by_substeps })
}

/// Evaluate a per-sample graph and fold its value and gradient outputs into
/// running accumulators with the given weight. Returns the loss value.
pub(crate) fn accumulate(
    graph: &ComputeGraph,
    bindings: &Bindings,
    ws: &mut Workspace,
    weight: f64,
    accs: &mut [&mut Tensor],
) -> Result<f64, TrainError> {
    graph.evaluate_into(bindings, ws)?;
    let loss = ws.output(graph, 0)[0];
    for (slot, acc) in accs.iter_mut().enumerate() {
        let out = ws.output(graph, 1 + slot);
        for (a, &g) in acc.data_mut().iter_mut().zip(out) {
            *a += weight * g;
        }
    }
    Ok(loss)
}

/// Fresh uniform collocation times on `[-1, 1]`.
pub fn sample_collocation(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    assert!(k >= 1, "need at least one collocation point");
    (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Fresh time pairs with `t_i` in `[-1, 0]` and `t_j` in `[0, 1]`.
pub fn sample_pairs(m: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    assert!(m >= 1, "need at least one pair");
    (0..m)
        .map(|_| (rng.gen_range(-1.0..0.0), rng.gen_range(0.0..1.0)))
        .collect()
}

fn scalar_time_tensor(t: f64) -> Tensor {
    Tensor::vector(vec![t])
}

fn bind_net<'a>(bindings: &mut Bindings<'a>, leaves: &[LeafId], net: &'a Network) {
    for (&leaf, tensor) in leaves.iter().zip(net.params.tensors()) {
        bindings.bind(leaf, tensor);
    }
}

/// Mean squared masked distance between the solution network and the
/// observations (the supervision loss).
pub fn loss_fit(solution: &Network, dataset: &Dataset) -> Result<f64, TrainError> {
    if dataset.observations.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    loss_fit_points(
        solution,
        &dataset.normalized_times(),
        &dataset
            .observations
            .states
            .iter()
            .map(|s| s.flat())
            .collect::<Vec<_>>(),
        &dataset.mask,
    )
}

pub(crate) fn loss_fit_points(
    solution: &Network,
    taus: &[f64],
    targets: &[Vec<f64>],
    mask: &[bool],
) -> Result<f64, TrainError> {
    if taus.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut b = GraphBuilder::new();
    let sol = declare_mlp_leaves(&mut b, "solution", &solution.config);
    let tau = b.leaf("tau", Shape::Vector(1));
    let obs = b.leaf("obs", Shape::Vector(solution.config.output_dim));
    let layout = LossLayout {
        sol: sol.clone(),
        partner: vec![],
        tau,
        tau_j: tau,
        obs,
        leaf_count: b.leaf_count(),
    };
    let loss = fit_loss_node(&mut b, &layout, &solution.config, mask);
    let g = b.finish(vec![loss]);

    let mut ws = Workspace::new();
    let mut total = 0.0;
    for (t, y) in taus.iter().zip(targets) {
        let tau_t = scalar_time_tensor(*t);
        let obs_t = Tensor::vector(y.clone());
        let mut bindings = Bindings::new(layout.leaf_count);
        bind_net(&mut bindings, &sol, solution);
        bindings.bind(tau, &tau_t).bind(obs, &obs_t);
        g.evaluate_into(&bindings, &mut ws)?;
        total += ws.output(&g, 0)[0];
    }
    Ok(total / taus.len() as f64)
}

fn residual_mean(
    solution: &Network,
    partner: &Network,
    kind: ResidualKind,
    times: &[f64],
    time_scale: f64,
) -> Result<f64, TrainError> {
    if times.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut b = GraphBuilder::new();
    let layout = declare_layout(&mut b, &solution.config, &partner.config);
    let loss = residual_loss_node(&mut b, &layout, &solution.config, &partner.config, kind, time_scale)?;
    let g = b.finish(vec![loss]);

    let mut ws = Workspace::new();
    let mut total = 0.0;
    for &t in times {
        let tau_t = scalar_time_tensor(t);
        let mut bindings = Bindings::new(layout.leaf_count);
        bind_net(&mut bindings, &layout.sol, solution);
        bind_net(&mut bindings, &layout.partner, partner);
        bindings.bind(layout.tau, &tau_t);
        g.evaluate_into(&bindings, &mut ws)?;
        total += ws.output(&g, 0)[0];
    }
    Ok(total / times.len() as f64)
}

/// Mean Hamiltonian residual over collocation times: the solution network's
/// raw-time derivative against the learned energy's vector field.
pub fn loss_hnn_residual(
    solution: &Network,
    hamiltonian: &Network,
    times: &[f64],
    time_scale: f64,
) -> Result<f64, TrainError> {
    residual_mean(solution, hamiltonian, ResidualKind::Hamiltonian, times, time_scale)
}

/// Mean ODE residual over collocation times against a black-box vector field.
pub fn loss_ode_residual(
    solution: &Network,
    dynamics: &Network,
    times: &[f64],
    time_scale: f64,
) -> Result<f64, TrainError> {
    residual_mean(solution, dynamics, ResidualKind::BlackBox, times, time_scale)
}

/// Mean squared energy difference over time pairs.
pub fn loss_extra(
    solution: &Network,
    hamiltonian: &Network,
    pairs: &[(f64, f64)],
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut b = GraphBuilder::new();
    let layout = declare_layout(&mut b, &solution.config, &hamiltonian.config);
    let loss = extra_loss_node(&mut b, &layout, &solution.config, &hamiltonian.config);
    let g = b.finish(vec![loss]);

    let mut ws = Workspace::new();
    let mut total = 0.0;
    for &(ti, tj) in pairs {
        let ti_t = scalar_time_tensor(ti);
        let tj_t = scalar_time_tensor(tj);
        let mut bindings = Bindings::new(layout.leaf_count);
        bind_net(&mut bindings, &layout.sol, solution);
        bind_net(&mut bindings, &layout.partner, hamiltonian);
        bindings.bind(layout.tau, &ti_t).bind(layout.tau_j, &tj_t);
        g.evaluate_into(&bindings, &mut ws)?;
        total += ws.output(&g, 0)[0];
    }
    Ok(total / pairs.len() as f64)
}
