//! Fixed-step explicit integrators: Euler, midpoint Runge–Kutta and the
//! classical fourth-order Runge–Kutta scheme.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::systems::{PhaseState, SystemError};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk2,
    Rk4,
}

impl Scheme {
    /// Derivative evaluations per step.
    pub fn stages(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk2 => 2,
            Scheme::Rk4 => 4,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "euler" => Some(Scheme::Euler),
            "rk2" => Some(Scheme::Rk2),
            "rk4" => Some(Scheme::Rk4),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk2 => "rk2",
            Scheme::Rk4 => "rk4",
        }
    }
}

/// A fixed-step integration request over `[t_start, t_end]`.
///
/// The number of steps is `ceil((t_end - t_start) / step)`; the step actually
/// taken is shrunk uniformly so the rollout lands exactly on `t_end`.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct RolloutSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub step: f64,
    pub scheme: Scheme,
}

impl RolloutSpec {
    pub fn new(t_start: f64, t_end: f64, step: f64, scheme: Scheme) -> Self {
        assert!(step > 0.0, "step must be positive");
        assert!(t_end > t_start, "t_end must exceed t_start");
        RolloutSpec { t_start, t_end, step, scheme }
    }

    pub fn n_steps(&self) -> usize {
        let raw = (self.t_end - self.t_start) / self.step;
        // tolerate representation noise in span/step before rounding up
        ((raw - 1e-9).ceil() as usize).max(1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IntegrateError {
    #[error("non-finite derivative at t = {t}")]
    NonFiniteDerivative { t: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type RhsFn<'a> = dyn Fn(f64, &PhaseState) -> Result<PhaseState, SystemError> + 'a;

thread_local! {
    static STEPS_TAKEN: Cell<u64> = const { Cell::new(0) };
}

/// Integrator steps taken on this thread since the process started.
/// Diagnostic only; lets callers account for integrator use.
pub fn steps_taken() -> u64 {
    STEPS_TAKEN.with(|c| c.get())
}

fn eval_rhs(rhs: &RhsFn, t: f64, state: &PhaseState) -> Result<PhaseState, IntegrateError> {
    let k = rhs(t, state)?;
    if !k.is_finite() {
        return Err(IntegrateError::NonFiniteDerivative { t });
    }
    Ok(k)
}

/// One explicit step of the named scheme from `state` at time `t`.
pub fn step(
    scheme: Scheme,
    rhs: &RhsFn,
    state: &PhaseState,
    t: f64,
    dt: f64,
) -> Result<PhaseState, IntegrateError> {
    STEPS_TAKEN.with(|c| c.set(c.get() + 1));
    let next = match scheme {
        Scheme::Euler => {
            let k1 = eval_rhs(rhs, t, state)?;
            state.add_scaled(&k1, dt)
        }
        Scheme::Rk2 => {
            let k1 = eval_rhs(rhs, t, state)?;
            let mid = state.add_scaled(&k1, dt / 2.0);
            let k2 = eval_rhs(rhs, t + dt / 2.0, &mid)?;
            state.add_scaled(&k2, dt)
        }
        Scheme::Rk4 => {
            let k1 = eval_rhs(rhs, t, state)?;
            let s2 = state.add_scaled(&k1, dt / 2.0);
            let k2 = eval_rhs(rhs, t + dt / 2.0, &s2)?;
            let s3 = state.add_scaled(&k2, dt / 2.0);
            let k3 = eval_rhs(rhs, t + dt / 2.0, &s3)?;
            let s4 = state.add_scaled(&k3, dt);
            let k4 = eval_rhs(rhs, t + dt, &s4)?;
            let mut acc = k1.add_scaled(&k2, 2.0);
            acc = acc.add_scaled(&k3, 2.0);
            acc = acc.add_scaled(&k4, 1.0);
            state.add_scaled(&acc, dt / 6.0)
        }
    };
    if !next.is_finite() {
        return Err(IntegrateError::NonFiniteState { t: t + dt });
    }
    Ok(next)
}

/// Dense trajectory at every integrator step, endpoints inclusive.
pub fn rollout(
    rhs: &RhsFn,
    initial: &PhaseState,
    spec: &RolloutSpec,
) -> Result<Trajectory, IntegrateError> {
    let n = spec.n_steps();
    let dt = (spec.t_end - spec.t_start) / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(spec.t_start);
    states.push(initial.clone());
    for i in 0..n {
        let t = spec.t_start + i as f64 * dt;
        let next = step(spec.scheme, rhs, states.last().expect("nonempty"), t, dt)?;
        times.push(if i + 1 == n { spec.t_end } else { spec.t_start + (i + 1) as f64 * dt });
        states.push(next);
    }
    Ok(Trajectory::new(times, states))
}
