//! Training loops for the joint solver and the baselines.
//!
//! The joint method fits a solution network to the observations while a
//! Hamiltonian network is trained on differential residuals at freshly
//! sampled collocation times, plus an energy-constancy penalty over time
//! pairs. Baselines cover the classical alternatives: Hamiltonian networks
//! trained on finite-difference or simulator derivatives, a black-box
//! deep-hidden-physics variant, and one-step prediction through an unrolled
//! integrator.

mod adam;
mod losses;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use losses::{
    loss_extra, loss_fit, loss_hnn_residual, loss_ode_residual, sample_collocation, sample_pairs,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{finite_difference_targets, DataError, Dataset, TimeMap};
use crate::graph::{Bindings, EvalError, GraphError, Tensor};
use crate::nets::{
    init_params, network_from_value, network_to_json, MlpConfig, NetError, Network, NetworkParams,
};
use crate::rng::{role_rng, role_seed};
use crate::systems::{hamilton_rhs, SystemError, SystemSpec};
use losses::{accumulate, build_solver_graphs, build_target_graphs, build_unrolled_graphs, ResidualKind};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dhh,
    HnnFd,
    HnnOracle,
    Dhpm,
    NeuralOde,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Dhh, Method::HnnFd, Method::HnnOracle, Method::Dhpm, Method::NeuralOde];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dhh => "dhh",
            Method::HnnFd => "hnn_fd",
            Method::HnnOracle => "hnn_oracle",
            Method::Dhpm => "dhpm",
            Method::NeuralOde => "neural_ode",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Does the trained model carry a solution network?
    pub fn has_solution(self) -> bool {
        matches!(self, Method::Dhh | Method::Dhpm)
    }
}

fn d_lambda_fit() -> f64 {
    1.0
}
fn d_lambda_ham() -> f64 {
    0.1
}
fn d_lambda_extra() -> f64 {
    0.01
}
fn d_lr_dynamics() -> f64 {
    1e-4
}
fn d_lr_solution() -> f64 {
    1e-2
}
fn d_steps() -> usize {
    20_000
}
fn d_collocation() -> usize {
    128
}
fn d_energy_pairs() -> usize {
    32
}
fn d_solution_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}
fn d_hamiltonian_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn d_dynamics_hidden() -> Vec<usize> {
    vec![64, 64]
}

/// Full training configuration; the JSON form is its serde mirror.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default = "d_lambda_fit")]
    pub lambda_fit: f64,
    /// Residual weight: 0.1 for the one-dof systems, 1.0 for n-body.
    #[serde(default = "d_lambda_ham")]
    pub lambda_ham: f64,
    #[serde(default = "d_lambda_extra")]
    pub lambda_extra: f64,
    /// Learning rate of the Hamiltonian and dynamics networks.
    #[serde(default = "d_lr_dynamics")]
    pub lr_dynamics: f64,
    /// Learning rate of the solution network.
    #[serde(default = "d_lr_solution")]
    pub lr_solution: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// Collocation points per optimization step.
    #[serde(default = "d_collocation")]
    pub collocation_points: usize,
    /// Energy pairs per optimization step.
    #[serde(default = "d_energy_pairs")]
    pub energy_pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_solution_hidden")]
    pub solution_hidden: Vec<usize>,
    #[serde(default = "d_hamiltonian_hidden")]
    pub hamiltonian_hidden: Vec<usize>,
    #[serde(default = "d_dynamics_hidden")]
    pub dynamics_hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn new(method: Method) -> Self {
        TrainConfig {
            method,
            lambda_fit: d_lambda_fit(),
            lambda_ham: d_lambda_ham(),
            lambda_extra: d_lambda_extra(),
            lr_dynamics: d_lr_dynamics(),
            lr_solution: d_lr_solution(),
            steps: d_steps(),
            collocation_points: d_collocation(),
            energy_pairs: d_energy_pairs(),
            seed: 0,
            solution_hidden: d_solution_hidden(),
            hamiltonian_hidden: d_hamiltonian_hidden(),
            dynamics_hidden: d_dynamics_hidden(),
        }
    }

    /// Defaults with the residual weight matched to the system family.
    pub fn for_system(method: Method, system: &SystemSpec) -> Self {
        let mut config = Self::new(method);
        if matches!(system, SystemSpec::NBody { .. }) {
            config.lambda_ham = 1.0;
        }
        config
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lambda_fit < 0.0 || self.lambda_ham < 0.0 || self.lambda_extra < 0.0 {
            return Err(TrainError::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.lr_dynamics <= 0.0 || self.lr_solution <= 0.0 {
            return Err(TrainError::InvalidConfig("learning rates must be positive".into()));
        }
        if self.steps == 0 {
            return Err(TrainError::InvalidConfig("need at least one step".into()));
        }
        if self.collocation_points == 0 || self.energy_pairs == 0 {
            return Err(TrainError::InvalidConfig(
                "collocation_points and energy_pairs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn solution_config(&self, dim2: usize) -> MlpConfig {
        MlpConfig::tanh(1, self.solution_hidden.clone(), dim2)
    }

    pub fn hamiltonian_config(&self, dim2: usize) -> MlpConfig {
        MlpConfig::tanh(dim2, self.hamiltonian_hidden.clone(), 1)
    }

    pub fn dynamics_config(&self, dim2: usize) -> MlpConfig {
        MlpConfig::tanh(dim2, self.dynamics_hidden.clone(), dim2)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has no observations")]
    EmptyDataset,
    #[error("non-finite gradient in the {term} term at step {step}")]
    NonFiniteGradient { step: usize, term: &'static str },
    #[error("training diverged in the {term} term at step {step}")]
    Diverged { step: usize, term: &'static str },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Raw per-term loss values; `total` is the weighted objective.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub fit: f64,
    pub ham: f64,
    pub extra: f64,
}

/// Networks produced by one training run.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub method: Method,
    pub solution: Option<Network>,
    pub hamiltonian: Option<Network>,
    pub dynamics: Option<Network>,
    pub time_map: TimeMap,
    pub loss_curve: Vec<LossRecord>,
}

impl TrainedModel {
    pub fn solution(&self) -> Option<&Network> {
        self.solution.as_ref()
    }

    pub fn hamiltonian(&self) -> Option<&Network> {
        self.hamiltonian.as_ref()
    }

    pub fn dynamics(&self) -> Option<&Network> {
        self.dynamics.as_ref()
    }
}

/// Train the configured method on a dataset.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    if dataset.observations.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    match config.method {
        Method::Dhh => train_solver(config, dataset, ResidualKind::Hamiltonian),
        Method::Dhpm => train_solver(config, dataset, ResidualKind::BlackBox),
        Method::HnnFd => train_on_targets(config, dataset, TargetSource::FiniteDifferences),
        Method::HnnOracle => train_on_targets(config, dataset, TargetSource::Simulator),
        Method::NeuralOde => train_unrolled(config, dataset),
    }
}

fn zeros_like(params: &NetworkParams) -> Vec<Tensor> {
    params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn reset(accs: &mut [Tensor]) {
    for t in accs {
        t.data_mut().fill(0.0);
    }
}

fn all_finite(accs: &[Tensor]) -> bool {
    accs.iter().all(|t| t.is_finite())
}

fn time_tensor(t: f64) -> Tensor {
    Tensor::vector(vec![t])
}

fn train_solver(
    config: &TrainConfig,
    dataset: &Dataset,
    kind: ResidualKind,
) -> Result<TrainedModel, TrainError> {
    let dim2 = 2 * dataset.dof();
    let sol_config = config.solution_config(dim2);
    let partner_config = match kind {
        ResidualKind::Hamiltonian => config.hamiltonian_config(dim2),
        ResidualKind::BlackBox => config.dynamics_config(dim2),
    };
    let mut sol_params = init_params(&sol_config, role_seed(config.seed, "init/solution"))?;
    let partner_role = match kind {
        ResidualKind::Hamiltonian => "init/hamiltonian",
        ResidualKind::BlackBox => "init/dynamics",
    };
    let mut partner_params = init_params(&partner_config, role_seed(config.seed, partner_role))?;

    // the black-box variant optimizes the plain sum of its two losses
    let (w_fit, w_res, w_extra) = match kind {
        ResidualKind::Hamiltonian => (config.lambda_fit, config.lambda_ham, config.lambda_extra),
        ResidualKind::BlackBox => (1.0, 1.0, 0.0),
    };
    let with_extra = matches!(kind, ResidualKind::Hamiltonian) && w_extra > 0.0;
    let graphs = build_solver_graphs(
        &sol_config,
        &partner_config,
        kind,
        &dataset.mask,
        dataset.time_map.scale,
        with_extra,
    )?;
    let layout = &graphs.layout;

    let taus_obs: Vec<Tensor> = dataset.normalized_times().into_iter().map(time_tensor).collect();
    let obs_states: Vec<Tensor> = dataset
        .observations
        .states
        .iter()
        .map(|s| Tensor::vector(s.flat()))
        .collect();
    let n_obs = taus_obs.len() as f64;

    let mut coll_rng = role_rng(config.seed, "train/collocation");
    let mut pair_rng = role_rng(config.seed, "train/pairs");
    let mut sol_state = AdamState::new(&sol_params);
    let mut partner_state = AdamState::new(&partner_params);
    let mut sol_acc = zeros_like(&sol_params);
    let mut partner_acc = zeros_like(&partner_params);
    let mut ws_fit = crate::graph::Workspace::new();
    let mut ws_res = crate::graph::Workspace::new();
    let mut ws_extra = crate::graph::Workspace::new();
    let mut curve = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        reset(&mut sol_acc);
        reset(&mut partner_acc);

        let mut bindings = Bindings::new(layout.leaf_count);
        for (&leaf, tensor) in layout.sol.iter().zip(sol_params.tensors()) {
            bindings.bind(leaf, tensor);
        }
        for (&leaf, tensor) in layout.partner.iter().zip(partner_params.tensors()) {
            bindings.bind(leaf, tensor);
        }

        // supervision over all observations
        let mut fit_sum = 0.0;
        if w_fit > 0.0 {
            for (tau_t, obs_t) in taus_obs.iter().zip(&obs_states) {
                let mut b = bindings.clone();
                b.bind(layout.tau, tau_t).bind(layout.obs, obs_t);
                let mut accs: Vec<&mut Tensor> = sol_acc.iter_mut().collect();
                fit_sum += accumulate(&graphs.fit, &b, &mut ws_fit, w_fit / n_obs, &mut accs)?;
            }
            if !all_finite(&sol_acc) {
                return Err(TrainError::NonFiniteGradient { step, term: "fit" });
            }
        }
        let fit_mean = fit_sum / n_obs;

        // differential residual at fresh collocation times
        let mut res_mean = 0.0;
        if w_res > 0.0 {
            let taus = sample_collocation(config.collocation_points, &mut coll_rng);
            let k = taus.len() as f64;
            let mut res_sum = 0.0;
            for t in taus {
                let tau_t = time_tensor(t);
                let mut b = bindings.clone();
                b.bind(layout.tau, &tau_t);
                let mut accs: Vec<&mut Tensor> =
                    sol_acc.iter_mut().chain(partner_acc.iter_mut()).collect();
                res_sum += accumulate(&graphs.residual, &b, &mut ws_res, w_res / k, &mut accs)?;
            }
            if !(all_finite(&sol_acc) && all_finite(&partner_acc)) {
                return Err(TrainError::NonFiniteGradient { step, term: "residual" });
            }
            res_mean = res_sum / k;
        }

        // energy constancy over fresh pairs
        let mut extra_mean = 0.0;
        if let Some(extra_graph) = graphs.extra.as_ref() {
            let pairs = sample_pairs(config.energy_pairs, &mut pair_rng);
            let m = pairs.len() as f64;
            let mut extra_sum = 0.0;
            for (ti, tj) in pairs {
                let ti_t = time_tensor(ti);
                let tj_t = time_tensor(tj);
                let mut b = bindings.clone();
                b.bind(layout.tau, &ti_t).bind(layout.tau_j, &tj_t);
                let mut accs: Vec<&mut Tensor> =
                    sol_acc.iter_mut().chain(partner_acc.iter_mut()).collect();
                extra_sum += accumulate(extra_graph, &b, &mut ws_extra, w_extra / m, &mut accs)?;
            }
            if !(all_finite(&sol_acc) && all_finite(&partner_acc)) {
                return Err(TrainError::NonFiniteGradient { step, term: "extra" });
            }
            extra_mean = extra_sum / m;
        }

        let total = w_fit * fit_mean + w_res * res_mean + w_extra * extra_mean;
        if !total.is_finite() {
            let term = if !fit_mean.is_finite() {
                "fit"
            } else if !res_mean.is_finite() {
                "residual"
            } else {
                "extra"
            };
            return Err(TrainError::Diverged { step, term });
        }

        drop(bindings);
        adam_step(&mut sol_params, &sol_acc, &mut sol_state, config.lr_solution);
        adam_step(&mut partner_params, &partner_acc, &mut partner_state, config.lr_dynamics);
        curve.push(LossRecord { step, total, fit: fit_mean, ham: res_mean, extra: extra_mean });
    }

    let solution = Some(Network::new(sol_config, sol_params)?);
    let (hamiltonian, dynamics) = match kind {
        ResidualKind::Hamiltonian => (Some(Network::new(partner_config, partner_params)?), None),
        ResidualKind::BlackBox => (None, Some(Network::new(partner_config, partner_params)?)),
    };
    Ok(TrainedModel {
        method: config.method,
        solution,
        hamiltonian,
        dynamics,
        time_map: dataset.time_map,
        loss_curve: curve,
    })
}

enum TargetSource {
    FiniteDifferences,
    Simulator,
}

fn train_on_targets(
    config: &TrainConfig,
    dataset: &Dataset,
    source: TargetSource,
) -> Result<TrainedModel, TrainError> {
    let dim2 = 2 * dataset.dof();
    let ham_config = config.hamiltonian_config(dim2);
    let mut ham_params = init_params(&ham_config, role_seed(config.seed, "init/hamiltonian"))?;

    let observations = &dataset.observations;
    let targets: Vec<Tensor> = match source {
        TargetSource::FiniteDifferences => finite_difference_targets(observations)?
            .into_iter()
            .map(|d| Tensor::vector(d.flat()))
            .collect(),
        TargetSource::Simulator => observations
            .states
            .iter()
            .map(|s| Ok(Tensor::vector(hamilton_rhs(&dataset.system, s)?.flat())))
            .collect::<Result<_, SystemError>>()?,
    };
    let states: Vec<Tensor> = observations.states.iter().map(|s| Tensor::vector(s.flat())).collect();
    let n = states.len() as f64;

    let graphs = build_target_graphs(&ham_config)?;
    let mut ham_state = AdamState::new(&ham_params);
    let mut ham_acc = zeros_like(&ham_params);
    let mut ws = crate::graph::Workspace::new();
    let mut curve = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        reset(&mut ham_acc);
        let mut bindings = Bindings::new(graphs.leaf_count);
        for (&leaf, tensor) in graphs.ham.iter().zip(ham_params.tensors()) {
            bindings.bind(leaf, tensor);
        }
        let mut sum = 0.0;
        for (state_t, target_t) in states.iter().zip(&targets) {
            let mut b = bindings.clone();
            b.bind(graphs.state, state_t).bind(graphs.target, target_t);
            let mut accs: Vec<&mut Tensor> = ham_acc.iter_mut().collect();
            sum += accumulate(&graphs.loss, &b, &mut ws, 1.0 / n, &mut accs)?;
        }
        if !all_finite(&ham_acc) {
            return Err(TrainError::NonFiniteGradient { step, term: "residual" });
        }
        let mean = sum / n;
        if !mean.is_finite() {
            return Err(TrainError::Diverged { step, term: "residual" });
        }
        drop(bindings);
        adam_step(&mut ham_params, &ham_acc, &mut ham_state, config.lr_dynamics);
        curve.push(LossRecord { step, total: mean, fit: 0.0, ham: mean, extra: 0.0 });
    }

    Ok(TrainedModel {
        method: config.method,
        solution: None,
        hamiltonian: Some(Network::new(ham_config, ham_params)?),
        dynamics: None,
        time_map: dataset.time_map,
        loss_curve: curve,
    })
}

/// Raw-time sub-step bound for the unrolled one-step predictions.
const MAX_SUBSTEP: f64 = 0.1;

fn train_unrolled(config: &TrainConfig, dataset: &Dataset) -> Result<TrainedModel, TrainError> {
    let dim2 = 2 * dataset.dof();
    let dyn_config = config.dynamics_config(dim2);
    let mut dyn_params = init_params(&dyn_config, role_seed(config.seed, "init/dynamics"))?;

    let obs = &dataset.observations;
    if obs.len() < 2 {
        return Err(TrainError::EmptyDataset);
    }
    struct Pair {
        start: Tensor,
        target: Tensor,
        substep: Tensor,
        k: usize,
    }
    let pairs: Vec<Pair> = obs
        .times
        .windows(2)
        .zip(obs.states.windows(2))
        .map(|(t, s)| {
            let dt = t[1] - t[0];
            let k = ((dt / MAX_SUBSTEP - 1e-9).ceil() as usize).max(1);
            Pair {
                start: Tensor::vector(s[0].flat()),
                target: Tensor::vector(s[1].flat()),
                substep: Tensor::scalar(dt / k as f64),
                k,
            }
        })
        .collect();
    let n = pairs.len() as f64;

    let graphs = build_unrolled_graphs(&dyn_config, pairs.iter().map(|p| p.k))?;
    let mut dyn_state = AdamState::new(&dyn_params);
    let mut dyn_acc = zeros_like(&dyn_params);
    let mut workspaces: std::collections::HashMap<usize, crate::graph::Workspace> =
        graphs.by_substeps.keys().map(|&k| (k, crate::graph::Workspace::new())).collect();
    let mut curve = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        reset(&mut dyn_acc);
        let mut bindings = Bindings::new(graphs.leaf_count);
        for (&leaf, tensor) in graphs.dynamics.iter().zip(dyn_params.tensors()) {
            bindings.bind(leaf, tensor);
        }
        let mut sum = 0.0;
        for pair in &pairs {
            let graph = &graphs.by_substeps[&pair.k];
            let ws = workspaces.get_mut(&pair.k).expect("workspace per sub-step count");
            let mut b = bindings.clone();
            b.bind(graphs.start, &pair.start)
                .bind(graphs.target, &pair.target)
                .bind(graphs.substep, &pair.substep);
            let mut accs: Vec<&mut Tensor> = dyn_acc.iter_mut().collect();
            sum += accumulate(graph, &b, ws, 1.0 / n, &mut accs)?;
        }
        if !all_finite(&dyn_acc) {
            return Err(TrainError::NonFiniteGradient { step, term: "prediction" });
        }
        let mean = sum / n;
        if !mean.is_finite() {
            return Err(TrainError::Diverged { step, term: "prediction" });
        }
        drop(bindings);
        adam_step(&mut dyn_params, &dyn_acc, &mut dyn_state, config.lr_dynamics);
        curve.push(LossRecord { step, total: mean, fit: mean, ham: 0.0, extra: 0.0 });
    }

    Ok(TrainedModel {
        method: config.method,
        solution: None,
        hamiltonian: None,
        dynamics: Some(Network::new(dyn_config, dyn_params)?),
        time_map: dataset.time_map,
        loss_curve: curve,
    })
}

/// Loss curves as CSV `step,loss_total,loss_fit,loss_ham,loss_extra`.
pub fn write_loss_csv(w: &mut impl Write, curve: &[LossRecord]) -> std::io::Result<()> {
    use crate::nets::fmt_f64;
    writeln!(w, "step,loss_total,loss_fit,loss_ham,loss_extra")?;
    for r in curve {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            fmt_f64(r.total),
            fmt_f64(r.fit),
            fmt_f64(r.ham),
            fmt_f64(r.extra)
        )?;
    }
    Ok(())
}

/// Checkpoint JSON: method plus one serialized network per role.
pub fn model_to_json(model: &TrainedModel) -> String {
    let mut nets = Vec::new();
    for (role, net) in [
        ("solution", model.solution.as_ref()),
        ("hamiltonian", model.hamiltonian.as_ref()),
        ("dynamics", model.dynamics.as_ref()),
    ] {
        if let Some(net) = net {
            nets.push(format!("\"{role}\":{}", network_to_json(&net.config, &net.params)));
        }
    }
    format!(
        "{{\"method\":\"{}\",\"time_map\":{},\"networks\":{{{}}}}}",
        model.method.name(),
        serde_json::to_string(&model.time_map).expect("time map serializes"),
        nets.join(",")
    )
}

pub fn model_from_json(text: &str) -> Result<TrainedModel, TrainError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| TrainError::MalformedCheckpoint(e.to_string()))?;
    let method = value
        .get("method")
        .and_then(|v| v.as_str())
        .and_then(Method::by_name)
        .ok_or_else(|| {
            TrainError::MalformedCheckpoint(format!(
                "method must be one of {:?}",
                Method::ALL.map(|m| m.name())
            ))
        })?;
    let time_map: TimeMap = serde_json::from_value(
        value
            .get("time_map")
            .cloned()
            .ok_or_else(|| TrainError::MalformedCheckpoint("missing time_map".into()))?,
    )
    .map_err(|e| TrainError::MalformedCheckpoint(format!("time_map: {e}")))?;
    let networks = value
        .get("networks")
        .and_then(|v| v.as_object())
        .ok_or_else(|| TrainError::MalformedCheckpoint("missing networks object".into()))?;
    let load = |role: &str| -> Result<Option<Network>, TrainError> {
        networks
            .get(role)
            .map(|v| {
                let (config, params) = network_from_value(v)
                    .map_err(|e| TrainError::MalformedCheckpoint(format!("{role}: {e}")))?;
                Network::new(config, params).map_err(TrainError::Net)
            })
            .transpose()
    };
    Ok(TrainedModel {
        method,
        solution: load("solution")?,
        hamiltonian: load("hamiltonian")?,
        dynamics: load("dynamics")?,
        time_map,
        loss_curve: Vec::new(),
    })
}
