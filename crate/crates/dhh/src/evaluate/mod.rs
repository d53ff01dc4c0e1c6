//! Trajectory reconstruction and error metrics.
//!
//! Methods built around a solution network read the trajectory directly from
//! that network; integrator-based methods (and the integrator-swap mode) roll
//! the learned vector field out of the first observed state. Errors are
//! mean squared distances to the dense ground truth, reported on a log scale.

mod sweep;

pub use sweep::{
    plot_report, sweep, write_report_csv, CellStats, SweepConfig, SweepOutcome, SweepReport,
    TrainOverrides,
};

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset, Trajectory, GROUND_TRUTH_DT};
use crate::graph::{Tensor, Workspace};
use crate::integrators::{rollout, IntegrateError, RolloutSpec, Scheme};
use crate::nets::{LearnedHamiltonian, MlpGraph, NetError, Network};
use crate::systems::{hamilton_rhs, Hamiltonian, PhaseState, SystemError, SystemSpec};
use crate::training::{Method, TrainError, TrainedModel};

/// Log-MSE floor; zero error reports `ln(1e-12)`.
pub const MSE_FLOOR: f64 = 1e-12;

/// Evaluation grid resolution across the training interval.
pub const EVAL_GRID: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum EvaluateError {
    #[error("model has no {0} network for this reconstruction mode")]
    MissingNetwork(&'static str),
    #[error("trajectories have different lengths: {0} vs {1}")]
    MisalignedLengths(usize, usize),
    #[error("evaluation time {0} lies outside the training interval")]
    OutOfInterval(f64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How to turn a trained model into a trajectory.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReconstructionMode {
    /// Evaluate the solution network; no integrator involved.
    SolutionNet,
    /// Integrate the learned vector field from the first observed state.
    Integrated(Scheme),
}

impl ReconstructionMode {
    /// The mode each method reports by default.
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Dhh | Method::Dhpm => ReconstructionMode::SolutionNet,
            Method::HnnFd | Method::HnnOracle => ReconstructionMode::Integrated(Scheme::Rk4),
            Method::NeuralOde => ReconstructionMode::Integrated(Scheme::Rk2),
        }
    }
}

/// Evenly spaced evaluation times across the training interval.
pub fn evaluation_grid(dataset: &Dataset, n: usize) -> Vec<f64> {
    let t0 = dataset.observations.times[0];
    let t1 = *dataset.observations.times.last().expect("nonempty");
    (0..n)
        .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Reconstruct the trajectory at `eval_times`.
pub fn reconstruct_trajectory(
    model: &TrainedModel,
    dataset: &Dataset,
    eval_times: &[f64],
    mode: ReconstructionMode,
) -> Result<Trajectory, EvaluateError> {
    assert!(!eval_times.is_empty(), "no evaluation times");
    let t0 = dataset.observations.times[0];
    let t1 = *dataset.observations.times.last().expect("nonempty");
    for &t in eval_times {
        if t < t0 - 1e-9 || t > t1 + 1e-9 {
            return Err(EvaluateError::OutOfInterval(t));
        }
    }

    match mode {
        ReconstructionMode::SolutionNet => {
            let solution = model.solution().ok_or(EvaluateError::MissingNetwork("solution"))?;
            let mlp = MlpGraph::new(solution.config.clone())?;
            let mut ws = Workspace::new();
            let states = eval_times
                .iter()
                .map(|&t| {
                    let tau = model.time_map.to_normalized(t).clamp(-1.0, 1.0);
                    let out = mlp.forward_into(
                        &solution.params,
                        &Tensor::vector(vec![tau]),
                        &mut ws,
                    )?;
                    Ok(PhaseState::from_flat(&out))
                })
                .collect::<Result<Vec<_>, NetError>>()?;
            Ok(Trajectory::new(eval_times.to_vec(), states))
        }
        ReconstructionMode::Integrated(scheme) => {
            let initial = dataset.observations.states[0].clone();
            let spec = RolloutSpec::new(t0, t1, GROUND_TRUTH_DT, scheme);
            let dense = if let Some(ham) = model.hamiltonian() {
                let learned = LearnedHamiltonian::new(ham.clone())?;
                rollout(&|_t, s| hamilton_rhs(&learned, s), &initial, &spec)?
            } else if let Some(dynamics) = model.dynamics() {
                let mlp = MlpGraph::new(dynamics.config.clone())?;
                let ws = std::cell::RefCell::new(Workspace::new());
                let rhs = |_t: f64, s: &PhaseState| {
                    let out = mlp
                        .forward_into(
                            &dynamics.params,
                            &Tensor::vector(s.flat()),
                            &mut ws.borrow_mut(),
                        )
                        .map_err(|e| SystemError::Model(e.to_string()))?;
                    Ok(PhaseState::from_flat(&out))
                };
                rollout(&rhs, &initial, &spec)?
            } else {
                return Err(EvaluateError::MissingNetwork("hamiltonian or dynamics"));
            };
            Ok(Trajectory::new(
                eval_times.to_vec(),
                eval_times.iter().map(|&t| dense.interpolate(t)).collect(),
            ))
        }
    }
}

/// Mean squared error over all times and coordinates, plus its floored
/// natural logarithm.
pub fn traj_log_mse(estimate: &Trajectory, truth: &Trajectory) -> Result<(f64, f64), EvaluateError> {
    if estimate.len() != truth.len() {
        return Err(EvaluateError::MisalignedLengths(estimate.len(), truth.len()));
    }
    let dim2 = 2 * estimate.dof();
    let mut sum = 0.0;
    for (a, b) in estimate.states.iter().zip(&truth.states) {
        for (x, y) in a.flat().iter().zip(b.flat()) {
            sum += (x - y) * (x - y);
        }
    }
    let mse = sum / (estimate.len() * dim2) as f64;
    Ok((mse, mse.max(MSE_FLOOR).ln()))
}

/// Per-coordinate mean squared errors in `q1..qd, p1..pd` order.
pub fn per_coordinate_mse(estimate: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>, EvaluateError> {
    if estimate.len() != truth.len() {
        return Err(EvaluateError::MisalignedLengths(estimate.len(), truth.len()));
    }
    let dim2 = 2 * estimate.dof();
    let mut acc = vec![0.0; dim2];
    for (a, b) in estimate.states.iter().zip(&truth.states) {
        for (k, (x, y)) in a.flat().iter().zip(b.flat()).enumerate() {
            acc[k] += (x - y) * (x - y);
        }
    }
    for v in &mut acc {
        *v /= estimate.len() as f64;
    }
    Ok(acc)
}

/// Interpolate the dense truth onto the estimate's grid, then score.
pub fn trajectory_error(
    estimate: &Trajectory,
    dense_truth: &Trajectory,
) -> Result<(f64, f64), EvaluateError> {
    let truth = Trajectory::new(
        estimate.times.clone(),
        estimate.times.iter().map(|&t| dense_truth.interpolate(t)).collect(),
    );
    traj_log_mse(estimate, &truth)
}

/// Agreement between a learned and a reference energy over the state-space
/// box visited by a trajectory, padded by 10%.
///
/// A Hamiltonian is identifiable only up to an additive constant, so the
/// value comparison subtracts the mean difference; the vector-field
/// comparison is the mean cosine similarity of the gradients. Singular
/// probes (n-body collisions) and zero-gradient probes are skipped.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HamiltonianComparison {
    pub offset_corrected_rmse: f64,
    pub gradient_cosine: f64,
    pub probes: usize,
}

pub fn compare_hamiltonian(
    learned: &dyn Hamiltonian,
    reference: &dyn Hamiltonian,
    system: &SystemSpec,
    visited: &Trajectory,
) -> Result<HamiltonianComparison, EvaluateError> {
    let probes = probe_states(system, visited);
    let mut diffs = Vec::new();
    let mut cosines = Vec::new();
    for state in &probes {
        if let Some(d) = crate::systems::min_body_distance(system, state) {
            if d < crate::data::MIN_BODY_DISTANCE {
                continue;
            }
        }
        let (hl, ht) = match (learned.energy(state), reference.energy(state)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => continue,
        };
        diffs.push(hl - ht);
        let (gl, gt) = (learned.gradient(state)?, reference.gradient(state)?);
        let gl: Vec<f64> = gl.0.iter().chain(&gl.1).copied().collect();
        let gt: Vec<f64> = gt.0.iter().chain(&gt.1).copied().collect();
        let (nl, nt) = (norm(&gl), norm(&gt));
        if nl > 1e-9 && nt > 1e-9 {
            let dot: f64 = gl.iter().zip(&gt).map(|(a, b)| a * b).sum();
            cosines.push(dot / (nl * nt));
        }
    }
    let offset = mean(&diffs);
    let rmse = (diffs.iter().map(|d| (d - offset) * (d - offset)).sum::<f64>()
        / diffs.len().max(1) as f64)
        .sqrt();
    Ok(HamiltonianComparison {
        offset_corrected_rmse: rmse,
        gradient_cosine: mean(&cosines),
        probes: diffs.len(),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Probe grid over the visited box: a regular 25x25 grid for one-dof
/// systems, 500 seeded uniform draws for higher-dimensional state spaces.
fn probe_states(system: &SystemSpec, visited: &Trajectory) -> Vec<PhaseState> {
    use rand::Rng;
    let dim2 = 2 * system.dof();
    let mut lo = vec![f64::INFINITY; dim2];
    let mut hi = vec![f64::NEG_INFINITY; dim2];
    for s in &visited.states {
        for (k, v) in s.flat().iter().enumerate() {
            lo[k] = lo[k].min(*v);
            hi[k] = hi[k].max(*v);
        }
    }
    for k in 0..dim2 {
        let pad = 0.1 * (hi[k] - lo[k]).max(1e-6);
        lo[k] -= pad;
        hi[k] += pad;
    }
    if dim2 == 2 {
        let side = 25;
        let mut states = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let q = lo[0] + (hi[0] - lo[0]) * i as f64 / (side - 1) as f64;
                let p = lo[1] + (hi[1] - lo[1]) * j as f64 / (side - 1) as f64;
                states.push(PhaseState::new(vec![q], vec![p]));
            }
        }
        states
    } else {
        let mut rng = crate::rng::role_rng(0, "evaluate/probes");
        (0..500)
            .map(|_| {
                let flat: Vec<f64> =
                    (0..dim2).map(|k| rng.gen_range(lo[k]..=hi[k])).collect();
                PhaseState::from_flat(&flat)
            })
            .collect()
    }
}

/// Reconstruction quality of coordinates the model never observed, up to an
/// additive constant per coordinate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HiddenCoordinateReport {
    pub offset_corrected_rmse: f64,
    /// Pearson correlation; 0 with `degenerate` set when variance vanishes.
    pub correlation: f64,
    pub degenerate: bool,
}

pub fn check_hidden_coordinate(
    model: &TrainedModel,
    dataset: &Dataset,
) -> Result<HiddenCoordinateReport, EvaluateError> {
    let hidden: Vec<usize> = dataset
        .mask
        .iter()
        .enumerate()
        .filter_map(|(k, &m)| (!m).then_some(k))
        .collect();
    assert!(!hidden.is_empty(), "dataset observes every coordinate");

    let times = evaluation_grid(dataset, EVAL_GRID);
    let estimate = reconstruct_trajectory(model, dataset, &times, ReconstructionMode::SolutionNet)?;

    let mut sq_sum = 0.0;
    let mut sq_count = 0usize;
    let mut correlations = Vec::new();
    let mut degenerate = false;
    for &k in &hidden {
        let est: Vec<f64> = estimate.states.iter().map(|s| s.flat()[k]).collect();
        let truth: Vec<f64> = times
            .iter()
            .map(|&t| dataset.ground_truth.interpolate(t).flat()[k])
            .collect();
        let offset = mean(&est.iter().zip(&truth).map(|(a, b)| a - b).collect::<Vec<_>>());
        for (a, b) in est.iter().zip(&truth) {
            let e = a - b - offset;
            sq_sum += e * e;
            sq_count += 1;
        }
        match pearson(&est, &truth) {
            Some(c) => correlations.push(c),
            None => {
                degenerate = true;
                correlations.push(0.0);
            }
        }
    }
    Ok(HiddenCoordinateReport {
        offset_corrected_rmse: (sq_sum / sq_count as f64).sqrt(),
        correlation: mean(&correlations),
        degenerate,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 1e-24 || vb <= 1e-24 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// JSON cannot carry IEEE infinities; failed-run markers serialize as null.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One trained-and-scored run inside a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub system: String,
    pub method: String,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// `infinity` (serialized as null) marks a failed run.
    #[serde(with = "inf_as_null")]
    pub mse: f64,
    #[serde(with = "inf_as_null")]
    pub log_mse: f64,
    pub per_coordinate_mse: Vec<f64>,
    pub failed: bool,
    /// Wall-clock seconds; excluded from files so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[cfg(test)]
mod tests;
