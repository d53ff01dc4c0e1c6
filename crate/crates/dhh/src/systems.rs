//! Ground-truth benchmark systems and Hamilton's equations.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// State in canonical coordinates: position `q` and conjugate momentum `p`,
/// each with `dof()` real components.
#[derive(Clone, PartialEq, Debug)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        assert!(!q.is_empty(), "state must have at least one degree of freedom");
        PhaseState { q, p }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Flat layout `q1..qd, p1..pd`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert!(flat.len() >= 2 && flat.len() % 2 == 0, "flat state must have even length");
        let d = flat.len() / 2;
        PhaseState { q: flat[..d].to_vec(), p: flat[d..].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }

    pub fn add_scaled(&self, other: &PhaseState, c: f64) -> PhaseState {
        PhaseState {
            q: self.q.iter().zip(&other.q).map(|(a, b)| a + c * b).collect(),
            p: self.p.iter().zip(&other.p).map(|(a, b)| a + c * b).collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("state has {got} degrees of freedom, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular configuration: coincident bodies")]
    SingularConfiguration,
    #[error("hamiltonian model evaluation failed: {0}")]
    Model(String),
}

/// One of the benchmark systems with its physical parameters.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    MassSpring { mass: f64, spring_constant: f64 },
    Pendulum { mass: f64, length: f64, gravity: f64 },
    /// Planar point masses under mutual gravity; `dof = 2 * masses.len()`.
    NBody { gravitational_constant: f64, masses: Vec<f64> },
}

impl SystemSpec {
    pub fn mass_spring() -> Self {
        SystemSpec::MassSpring { mass: 0.5, spring_constant: 2.0 }
    }

    pub fn pendulum() -> Self {
        SystemSpec::Pendulum { mass: 0.5, length: 1.0, gravity: 3.0 }
    }

    pub fn n_body(bodies: usize) -> Self {
        assert!(bodies >= 2, "n-body needs at least two bodies");
        SystemSpec::NBody { gravitational_constant: 1.0, masses: vec![1.0; bodies] }
    }

    pub fn two_body() -> Self {
        Self::n_body(2)
    }

    pub fn three_body() -> Self {
        Self::n_body(3)
    }

    /// Degrees of freedom `d`; states have `2d` coordinates.
    pub fn dof(&self) -> usize {
        match self {
            SystemSpec::MassSpring { .. } | SystemSpec::Pendulum { .. } => 1,
            SystemSpec::NBody { masses, .. } => 2 * masses.len(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SystemSpec::MassSpring { .. } => "mass_spring".into(),
            SystemSpec::Pendulum { .. } => "pendulum".into(),
            SystemSpec::NBody { masses, .. } => match masses.len() {
                2 => "two_body".into(),
                3 => "three_body".into(),
                n => format!("{n}_body"),
            },
        }
    }

    /// Default-parameter system by name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "mass_spring" => Some(Self::mass_spring()),
            "pendulum" => Some(Self::pendulum()),
            "two_body" | "2_body" => Some(Self::two_body()),
            "three_body" | "3_body" => Some(Self::three_body()),
            _ => None,
        }
    }

    fn check_state(&self, state: &PhaseState) -> Result<(), SystemError> {
        if state.dof() != self.dof() {
            return Err(SystemError::DimensionMismatch { expected: self.dof(), got: state.dof() });
        }
        Ok(())
    }
}

/// A scalar energy function with a gradient, the interface shared by the
/// analytic benchmark Hamiltonians and learned Hamiltonian networks.
pub trait Hamiltonian {
    fn dof(&self) -> usize;
    fn energy(&self, state: &PhaseState) -> Result<f64, SystemError>;
    /// `(dH/dq, dH/dp)` at `state`.
    fn gradient(&self, state: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), SystemError>;
}

/// Total energy of a benchmark system.
pub fn hamiltonian_true(spec: &SystemSpec, state: &PhaseState) -> Result<f64, SystemError> {
    spec.energy(state)
}

impl Hamiltonian for SystemSpec {
    fn dof(&self) -> usize {
        SystemSpec::dof(self)
    }

    fn energy(&self, state: &PhaseState) -> Result<f64, SystemError> {
        self.check_state(state)?;
        match self {
            SystemSpec::MassSpring { mass, spring_constant } => {
                let (q, p) = (state.q[0], state.p[0]);
                Ok(0.5 * spring_constant * q * q + p * p / (2.0 * mass))
            }
            SystemSpec::Pendulum { mass, length, gravity } => {
                let (q, p) = (state.q[0], state.p[0]);
                Ok(2.0 * mass * gravity * length * (1.0 - q.cos())
                    + length * length * p * p / (2.0 * mass))
            }
            SystemSpec::NBody { gravitational_constant, masses } => {
                let n = masses.len();
                let mut h = 0.0;
                for i in 0..n {
                    let (px, py) = (state.p[2 * i], state.p[2 * i + 1]);
                    h += (px * px + py * py) / (2.0 * masses[i]);
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let r = body_distance(state, i, j);
                        if r == 0.0 {
                            return Err(SystemError::SingularConfiguration);
                        }
                        h -= gravitational_constant * masses[i] * masses[j] / r;
                    }
                }
                Ok(h)
            }
        }
    }

    fn gradient(&self, state: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), SystemError> {
        self.check_state(state)?;
        match self {
            SystemSpec::MassSpring { mass, spring_constant } => Ok((
                vec![spring_constant * state.q[0]],
                vec![state.p[0] / mass],
            )),
            SystemSpec::Pendulum { mass, length, gravity } => Ok((
                vec![2.0 * mass * gravity * length * state.q[0].sin()],
                vec![length * length * state.p[0] / mass],
            )),
            SystemSpec::NBody { gravitational_constant, masses } => {
                let n = masses.len();
                let mut dq = vec![0.0; 2 * n];
                let mut dp = vec![0.0; 2 * n];
                for i in 0..n {
                    dp[2 * i] = state.p[2 * i] / masses[i];
                    dp[2 * i + 1] = state.p[2 * i + 1] / masses[i];
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let dx = state.q[2 * i] - state.q[2 * j];
                        let dy = state.q[2 * i + 1] - state.q[2 * j + 1];
                        let r2 = dx * dx + dy * dy;
                        if r2 == 0.0 {
                            return Err(SystemError::SingularConfiguration);
                        }
                        let c = gravitational_constant * masses[i] * masses[j] / r2.powf(1.5);
                        // dH/dq_i of -G m_i m_j / r
                        dq[2 * i] += c * dx;
                        dq[2 * i + 1] += c * dy;
                        dq[2 * j] -= c * dx;
                        dq[2 * j + 1] -= c * dy;
                    }
                }
                Ok((dq, dp))
            }
        }
    }
}

fn body_distance(state: &PhaseState, i: usize, j: usize) -> f64 {
    let dx = state.q[2 * i] - state.q[2 * j];
    let dy = state.q[2 * i + 1] - state.q[2 * j + 1];
    (dx * dx + dy * dy).sqrt()
}

/// Minimum pairwise distance of an n-body state; `None` for other systems.
pub fn min_body_distance(spec: &SystemSpec, state: &PhaseState) -> Option<f64> {
    match spec {
        SystemSpec::NBody { masses, .. } => {
            let n = masses.len();
            let mut min = f64::INFINITY;
            for i in 0..n {
                for j in (i + 1)..n {
                    min = min.min(body_distance(state, i, j));
                }
            }
            Some(min)
        }
        _ => None,
    }
}

/// Hamilton's equations: `(dq/dt, dp/dt) = (dH/dp, -dH/dq)`.
pub fn hamilton_rhs(h: &dyn Hamiltonian, state: &PhaseState) -> Result<PhaseState, SystemError> {
    let (dq, dp) = h.gradient(state)?;
    Ok(PhaseState { q: dp, p: dq.into_iter().map(|g| -g).collect() })
}

/// Draw a training initial state.
///
/// One-dof systems sample `(q, p)` area-uniformly on the annulus
/// `0.5 <= |(q, p)| <= 1.5`, avoiding the trivial fixed point. N-body systems
/// place the bodies on a unit ring around the barycenter in a circular
/// configuration at a random orientation, perturb each tangential momentum
/// multiplicatively by up to ±10%, then remove the mean momentum so the
/// barycenter is exactly at rest.
pub fn sample_initial_state(spec: &SystemSpec, rng: &mut impl Rng) -> PhaseState {
    match spec {
        SystemSpec::MassSpring { .. } | SystemSpec::Pendulum { .. } => {
            let (r_min, r_max) = (0.5, 1.5);
            let u: f64 = rng.gen_range(0.0..1.0);
            let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            PhaseState::new(vec![r * angle.cos()], vec![r * angle.sin()])
        }
        SystemSpec::NBody { gravitational_constant, masses } => {
            let n = masses.len();
            let radius = 1.0;
            // circular-orbit speed for equal masses on a ring
            let ring_sum: f64 = (1..n)
                .map(|j| 1.0 / (std::f64::consts::PI * j as f64 / n as f64).sin())
                .sum();
            let speed = (gravitational_constant * masses[0] * ring_sum / (4.0 * radius)).sqrt();
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);

            let mut q = vec![0.0; 2 * n];
            let mut p = vec![0.0; 2 * n];
            for i in 0..n {
                let angle = phase + std::f64::consts::TAU * i as f64 / n as f64;
                q[2 * i] = radius * angle.cos();
                q[2 * i + 1] = radius * angle.sin();
                let jitter: f64 = 1.0 + rng.gen_range(-0.1..0.1);
                p[2 * i] = -angle.sin() * speed * masses[i] * jitter;
                p[2 * i + 1] = angle.cos() * speed * masses[i] * jitter;
            }
            // restore zero total momentum
            let (mut sx, mut sy) = (0.0, 0.0);
            for i in 0..n {
                sx += p[2 * i];
                sy += p[2 * i + 1];
            }
            for i in 0..n {
                p[2 * i] -= sx / n as f64;
                p[2 * i + 1] -= sy / n as f64;
            }
            PhaseState::new(q, p)
        }
    }
}
