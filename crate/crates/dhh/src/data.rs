//! Dataset construction: trajectory subsampling, observation noise, time
//! normalization and partial-observability masks, plus the file formats the
//! command line reads and writes.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::integrators::{rollout, IntegrateError, RolloutSpec, Scheme};
use crate::nets::fmt_f64;
use crate::rng::role_rng;
use crate::systems::{hamilton_rhs, min_body_distance, sample_initial_state, PhaseState, SystemSpec};

/// Ground-truth generation step; observation grids are subsampled from this.
pub const GROUND_TRUTH_DT: f64 = 1e-3;

/// Minimum pairwise body distance tolerated during n-body data generation.
pub const MIN_BODY_DISTANCE: f64 = 0.1;

const MAX_GENERATION_RETRIES: usize = 100;

/// A time-ordered sequence of states.
#[derive(Clone, PartialEq, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<PhaseState>) -> Self {
        assert_eq!(times.len(), states.len(), "times and states must align");
        assert!(!times.is_empty(), "empty trajectory");
        assert!(
            times.windows(2).all(|w| w[0] < w[1]),
            "times must be strictly increasing"
        );
        let d = states[0].dof();
        assert!(states.iter().all(|s| s.dof() == d), "inconsistent state dimension");
        Trajectory { times, states }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.states[0].dof()
    }

    /// Linear interpolation at `t`, clamped to the covered interval.
    pub fn interpolate(&self, t: f64) -> PhaseState {
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= *self.times.last().expect("nonempty") {
            return self.states.last().expect("nonempty").clone();
        }
        let hi = self.times.partition_point(|&x| x < t);
        let (t0, t1) = (self.times[hi - 1], self.times[hi]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (&self.states[hi - 1], &self.states[hi]);
        PhaseState {
            q: a.q.iter().zip(&b.q).map(|(x, y)| x + w * (y - x)).collect(),
            p: a.p.iter().zip(&b.p).map(|(x, y)| x + w * (y - x)).collect(),
        }
    }
}

/// Affine map between raw and normalized time: `tau = scale * t + offset`,
/// sending the observation interval onto `[-1, 1]`.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct TimeMap {
    pub scale: f64,
    pub offset: f64,
}

impl TimeMap {
    pub fn identity() -> Self {
        TimeMap { scale: 1.0, offset: 0.0 }
    }

    pub fn from_interval(t_min: f64, t_max: f64) -> Result<Self, DataError> {
        if t_max <= t_min {
            return Err(DataError::DegenerateTimes);
        }
        let scale = 2.0 / (t_max - t_min);
        TimeMap { scale, offset: -1.0 - scale * t_min }.validated()
    }

    fn validated(self) -> Result<Self, DataError> {
        if !(self.scale.is_finite() && self.offset.is_finite()) || self.scale == 0.0 {
            return Err(DataError::DegenerateTimes);
        }
        Ok(self)
    }

    pub fn to_normalized(&self, t: f64) -> f64 {
        self.scale * t + self.offset
    }

    pub fn to_raw(&self, tau: f64) -> f64 {
        (tau - self.offset) / self.scale
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Regular,
    Irregular,
}

impl SampleMode {
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "regular" => Some(SampleMode::Regular),
            "irregular" => Some(SampleMode::Irregular),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("need at least {need} points, found {found}")]
    TooFewPoints { need: usize, found: usize },
    #[error("requested {requested} points from a trajectory of {available}")]
    CountOutOfRange { requested: usize, available: usize },
    #[error("times span a degenerate interval")]
    DegenerateTimes,
    #[error("observability mask needs length {expected} with at least one observed coordinate")]
    InvalidMask { expected: usize },
    #[error("no admissible trajectory after {0} attempts")]
    GenerationFailed(usize),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
}

/// Pick `n` observations from a dense trajectory.
///
/// `Regular` takes evenly spaced indices including both endpoints;
/// `Irregular` keeps the endpoints and draws the remaining `n - 2` interior
/// grid points uniformly without replacement.
pub fn subsample(
    traj: &Trajectory,
    n: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Trajectory, DataError> {
    if n < 2 {
        return Err(DataError::TooFewPoints { need: 2, found: n });
    }
    let len = traj.len();
    if n > len {
        return Err(DataError::CountOutOfRange { requested: n, available: len });
    }
    let indices: Vec<usize> = match mode {
        SampleMode::Regular => (0..n)
            .map(|i| ((i * (len - 1)) as f64 / (n - 1) as f64).round() as usize)
            .collect(),
        SampleMode::Irregular => {
            let mut interior =
                rand::seq::index::sample(rng, len - 2, n - 2).into_iter()
                    .map(|i| i + 1)
                    .collect::<Vec<_>>();
            interior.sort_unstable();
            let mut idx = Vec::with_capacity(n);
            idx.push(0);
            idx.extend(interior);
            idx.push(len - 1);
            idx
        }
    };
    Ok(Trajectory::new(
        indices.iter().map(|&i| traj.times[i]).collect(),
        indices.iter().map(|&i| traj.states[i].clone()).collect(),
    ))
}

/// Independent zero-mean Gaussian noise on every state coordinate; times are
/// untouched and `sigma == 0` is the identity.
pub fn add_noise(traj: &Trajectory, sigma: f64, rng: &mut impl Rng) -> Trajectory {
    assert!(sigma >= 0.0, "noise level must be non-negative");
    if sigma == 0.0 {
        return traj.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let states = traj
        .states
        .iter()
        .map(|s| PhaseState {
            q: s.q.iter().map(|&v| v + normal.sample(rng)).collect(),
            p: s.p.iter().map(|&v| v + normal.sample(rng)).collect(),
        })
        .collect();
    Trajectory { times: traj.times.clone(), states }
}

/// Rescale times onto `[-1, 1]`; returns the rescaled trajectory and the map.
pub fn normalize_time(traj: &Trajectory) -> Result<(Trajectory, TimeMap), DataError> {
    if traj.len() < 2 {
        return Err(DataError::TooFewPoints { need: 2, found: traj.len() });
    }
    let map = TimeMap::from_interval(traj.times[0], *traj.times.last().expect("nonempty"))?;
    let times = traj
        .times
        .iter()
        .map(|&t| map.to_normalized(t).clamp(-1.0, 1.0))
        .collect();
    Ok((Trajectory::new(times, traj.states.clone()), map))
}

/// Per-observation state-derivative estimates from the observations alone:
/// three-point non-uniform stencils, central at interior points and one-sided
/// at the endpoints. Exact for signals quadratic in time on the stencil.
pub fn finite_difference_targets(traj: &Trajectory) -> Result<Vec<PhaseState>, DataError> {
    let n = traj.len();
    if n < 3 {
        return Err(DataError::TooFewPoints { need: 3, found: n });
    }
    let deriv_at = |stencil: [usize; 3], at: f64| -> PhaseState {
        let [i0, i1, i2] = stencil;
        let (t0, t1, t2) = (traj.times[i0], traj.times[i1], traj.times[i2]);
        let w0 = (2.0 * at - t1 - t2) / ((t0 - t1) * (t0 - t2));
        let w1 = (2.0 * at - t0 - t2) / ((t1 - t0) * (t1 - t2));
        let w2 = (2.0 * at - t0 - t1) / ((t2 - t0) * (t2 - t1));
        let (s0, s1, s2) = (&traj.states[i0], &traj.states[i1], &traj.states[i2]);
        PhaseState {
            q: (0..traj.dof())
                .map(|k| w0 * s0.q[k] + w1 * s1.q[k] + w2 * s2.q[k])
                .collect(),
            p: (0..traj.dof())
                .map(|k| w0 * s0.p[k] + w1 * s1.p[k] + w2 * s2.p[k])
                .collect(),
        }
    };
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                deriv_at([0, 1, 2], traj.times[0])
            } else if i == n - 1 {
                deriv_at([n - 3, n - 2, n - 1], traj.times[n - 1])
            } else {
                deriv_at([i - 1, i, i + 1], traj.times[i])
            }
        })
        .collect())
}

/// Raw time span used for ground-truth generation, per system.
pub fn default_span(system: &SystemSpec) -> (f64, f64) {
    match system {
        SystemSpec::NBody { masses, .. } if masses.len() >= 3 => (0.0, 5.0),
        _ => (0.0, 10.0),
    }
}

/// Observations plus everything needed to train against and evaluate them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub system: SystemSpec,
    /// Possibly noisy observations at raw times.
    pub observations: Trajectory,
    /// Per-coordinate observability in `q1..qd, p1..pd` order.
    pub mask: Vec<bool>,
    pub noise_sigma: f64,
    pub mode: SampleMode,
    pub seed: u64,
    pub time_map: TimeMap,
    /// Dense clean trajectory, retained for evaluation only.
    pub ground_truth: Trajectory,
}

impl Dataset {
    /// Observation times in normalized units.
    pub fn normalized_times(&self) -> Vec<f64> {
        self.observations
            .times
            .iter()
            .map(|&t| self.time_map.to_normalized(t).clamp(-1.0, 1.0))
            .collect()
    }

    pub fn dof(&self) -> usize {
        self.system.dof()
    }

    pub fn observed_coordinates(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Sample an initial state and integrate the ground truth densely. N-body
/// draws whose bodies pass closer than [`MIN_BODY_DISTANCE`] are rejected and
/// resampled, keeping the truth inside the integrator's accuracy regime.
pub fn generate_ground_truth(
    system: &SystemSpec,
    seed: u64,
) -> Result<Trajectory, DataError> {
    let (t_start, t_end) = default_span(system);
    let mut rng = role_rng(seed, "data/initial-state");
    let rollout_spec = RolloutSpec::new(t_start, t_end, GROUND_TRUTH_DT, Scheme::Rk4);
    for _ in 0..MAX_GENERATION_RETRIES {
        let initial = sample_initial_state(system, &mut rng);
        let traj = match rollout(&|_t, s| hamilton_rhs(system, s), &initial, &rollout_spec) {
            Ok(t) => t,
            // close encounters can blow up the derivative; try a fresh draw
            Err(IntegrateError::System(_)) | Err(IntegrateError::NonFiniteDerivative { .. })
            | Err(IntegrateError::NonFiniteState { .. }) => continue,
        };
        let admissible = traj.states.iter().all(|s| {
            min_body_distance(system, s).map_or(true, |d| d >= MIN_BODY_DISTANCE)
        });
        if admissible {
            return Ok(traj);
        }
    }
    Err(DataError::GenerationFailed(MAX_GENERATION_RETRIES))
}

/// Build a dataset: dense truth, subsampled observations, optional noise,
/// time normalization. A pure function of its arguments.
pub fn generate_dataset(
    system: &SystemSpec,
    n: usize,
    mode: SampleMode,
    sigma: f64,
    seed: u64,
    mask: Option<Vec<bool>>,
) -> Result<Dataset, DataError> {
    let mask = match mask {
        Some(m) => {
            if m.len() != 2 * system.dof() || !m.iter().any(|&x| x) {
                return Err(DataError::InvalidMask { expected: 2 * system.dof() });
            }
            m
        }
        None => vec![true; 2 * system.dof()],
    };
    let ground_truth = generate_ground_truth(system, seed)?;
    let mut sub_rng = role_rng(seed, "data/subsample");
    let clean = subsample(&ground_truth, n, mode, &mut sub_rng)?;
    let mut noise_rng = role_rng(seed, "data/noise");
    let observations = add_noise(&clean, sigma, &mut noise_rng);
    let time_map = TimeMap::from_interval(
        observations.times[0],
        *observations.times.last().expect("nonempty"),
    )?;
    Ok(Dataset {
        system: system.clone(),
        observations,
        mask,
        noise_sigma: sigma,
        mode,
        seed,
        time_map,
        ground_truth,
    })
}

/// Sidecar metadata stored next to the observation CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: SystemSpec,
    pub sigma: f64,
    pub mode: SampleMode,
    pub seed: u64,
    pub time_map: TimeMap,
    pub mask: Vec<bool>,
}

/// Write observations as CSV with header `t,q1..qd,p1..pd`, 17 significant
/// digits per value.
pub fn write_observations_csv(w: &mut impl Write, traj: &Trajectory) -> Result<(), DataError> {
    let d = traj.dof();
    let mut header = String::from("t");
    for i in 1..=d {
        header.push_str(&format!(",q{i}"));
    }
    for i in 1..=d {
        header.push_str(&format!(",p{i}"));
    }
    writeln!(w, "{header}")?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = fmt_f64(*t);
        for v in s.q.iter().chain(&s.p) {
            row.push(',');
            row.push_str(&fmt_f64(*v));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn read_observations_csv(r: impl BufRead) -> Result<Trajectory, DataError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::Malformed("empty file".into()))??;
    let cols = header.split(',').count();
    if cols < 3 || cols % 2 == 0 {
        return Err(DataError::Malformed(format!("unexpected header `{header}`")));
    }
    let d = (cols - 1) / 2;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    DataError::Malformed(format!("row {}: `{f}`: {e}", lineno + 2))
                })
            })
            .collect::<Result<_, _>>()?;
        if fields.len() != cols {
            return Err(DataError::Malformed(format!(
                "row {}: expected {cols} fields, found {}",
                lineno + 2,
                fields.len()
            )));
        }
        times.push(fields[0]);
        states.push(PhaseState::new(
            fields[1..1 + d].to_vec(),
            fields[1 + d..].to_vec(),
        ));
    }
    if times.is_empty() {
        return Err(DataError::Malformed("no observation rows".into()));
    }
    Ok(Trajectory::new(times, states))
}

/// Write `<stem>.csv` and `<stem>.json` under `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path, stem: &str) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    write_observations_csv(&mut csv, &dataset.observations)?;
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    let meta = DatasetMeta {
        system: dataset.system.clone(),
        sigma: dataset.noise_sigma,
        mode: dataset.mode,
        seed: dataset.seed,
        time_map: dataset.time_map,
        mask: dataset.mask.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

/// Load a dataset from its CSV and sidecar; the dense ground truth is
/// regenerated deterministically from the recorded system and seed.
pub fn load_dataset(csv_path: &Path, json_path: &Path) -> Result<Dataset, DataError> {
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(json_path)?)
        .map_err(|e| DataError::Malformed(format!("{}: {e}", json_path.display())))?;
    let file = std::fs::File::open(csv_path)?;
    let observations = read_observations_csv(std::io::BufReader::new(file))?;
    if observations.dof() != meta.system.dof() {
        return Err(DataError::Malformed(format!(
            "observations have {} degrees of freedom, system `{}` expects {}",
            observations.dof(),
            meta.system.name(),
            meta.system.dof()
        )));
    }
    if meta.mask.len() != 2 * meta.system.dof() || !meta.mask.iter().any(|&x| x) {
        return Err(DataError::InvalidMask { expected: 2 * meta.system.dof() });
    }
    let ground_truth = generate_ground_truth(&meta.system, meta.seed)?;
    Ok(Dataset {
        system: meta.system,
        observations,
        mask: meta.mask,
        noise_sigma: meta.sigma,
        mode: meta.mode,
        seed: meta.seed,
        time_map: meta.time_map,
        ground_truth,
    })
}
