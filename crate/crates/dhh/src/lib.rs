//! Joint learning of Hamiltonians and continuous-time trajectories.

pub mod data;
pub mod evaluate;
pub mod graph;
pub mod integrators;
pub mod nets;
pub mod plot;
pub mod rng;
pub mod systems;
pub mod training;
