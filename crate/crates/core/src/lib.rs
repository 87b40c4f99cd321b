//! Grid traffic signal control toolkit.
//!
//! A one-way Manhattan grid microsimulator with stage-based signals, three
//! decentralized deep Q-learning controller schemes (IDQL, S2RL, S2R2L), a
//! max-pressure baseline, and the tabular RL reference algorithms used to
//! validate the learning machinery.
//!
//! The learning math (`nn`, `dqn`, `tabular`) is generic over the scalar type
//! through [`Real`]; the traffic side runs in `f64`. Concrete aliases for the
//! common instantiations live at the crate root.

pub mod dqn;
pub mod error;
pub mod harness;
pub mod marl;
pub mod max_pressure;
pub mod microsim;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod signal;
pub mod tabular;

pub use error::{Error, Result};
pub use scalar::Real;

/// Multilayer perceptron in double precision (the default used by the agents).
pub type Mlp64 = nn::Mlp<f64>;
/// Multilayer perceptron in single precision.
pub type Mlp32 = nn::Mlp<f32>;
/// Deep Q learner in double precision.
pub type DqnLearner64 = dqn::DqnLearner<f64>;
/// Deep Q learner in single precision.
pub type DqnLearner32 = dqn::DqnLearner<f32>;
/// Prioritized replay memory in double precision.
pub type ReplayMemory64 = dqn::ReplayMemory<f64>;
/// Tabular action-value table in double precision.
pub type QTable64 = tabular::QTable<f64>;
/// Finite MDP in double precision.
pub type FiniteMdp64 = tabular::FiniteMdp<f64>;
