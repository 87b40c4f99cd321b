//! n-step Double DQN with proportional prioritized replay.

mod replay;
mod sum_tree;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp};
use crate::scalar::{argmax, Real};

pub use replay::{nstep_experience, Experience, ReplayMemory, Transition};
pub use sum_tree::SumTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { decay: 0.995, floor: 0.05 }
    }
}

impl EpsilonSchedule {
    /// `max(decay^t, floor)`.
    pub fn at(&self, t: u64) -> f64 {
        self.decay.powf(t as f64).max(self.floor)
    }
}

/// Exploration rate with the default schedule.
pub fn epsilon(t: u64) -> f64 {
    EpsilonSchedule::default().at(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub batch_size: usize,
    pub n_step: usize,
    /// Learning steps between target-network syncs.
    pub target_sync: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub alpha_per: f64,
    pub eps_priority: f64,
    pub memory_capacity: usize,
    pub epsilon: EpsilonSchedule,
    pub hidden: Vec<usize>,
    /// Dropout on the network input.
    pub input_dropout: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            n_step: 16,
            target_sync: 100,
            gamma: 0.99,
            learning_rate: 1e-4,
            alpha_per: 1.0,
            eps_priority: 1e-6,
            memory_capacity: 100_000,
            epsilon: EpsilonSchedule::default(),
            hidden: vec![64, 32],
            input_dropout: 0.4,
        }
    }
}

impl DqnConfig {
    /// Names of offending fields, empty when valid.
    pub fn invalid_keys(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, key: &str| {
            if !ok {
                bad.push(format!("dqn.{key}"));
            }
        };
        check(self.batch_size > 0, "batch_size");
        check(self.n_step > 0, "n_step");
        check(self.target_sync > 0, "target_sync");
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma");
        check(self.learning_rate > 0.0, "learning_rate");
        check(self.alpha_per >= 0.0, "alpha_per");
        check(self.eps_priority > 0.0, "eps_priority");
        check(self.memory_capacity > 0, "memory_capacity");
        check(self.epsilon.decay > 0.0 && self.epsilon.decay <= 1.0 && (0.0..=1.0).contains(&self.epsilon.floor), "epsilon");
        check(self.hidden.iter().all(|&h| h > 0), "hidden");
        check((0.0..1.0).contains(&self.input_dropout), "input_dropout");
        bad
    }

    pub fn layer_dims(&self, input: usize, actions: usize) -> Vec<usize> {
        std::iter::once(input).chain(self.hidden.iter().copied()).chain(std::iter::once(actions)).collect()
    }
}

/// ε-greedy: uniform action with probability `eps`, otherwise the greedy
/// action (lowest index on ties).
pub fn select_action<T: Real, R: Rng + ?Sized>(net: &Mlp<T>, state: &[T], eps: f64, rng: &mut R) -> Result<usize> {
    if rng.random::<f64>() < eps {
        return Ok(rng.random_range(0..net.output_dim()));
    }
    Ok(argmax(&net.predict(state)?))
}

/// Double DQN target: the local network picks the bootstrap action, the
/// target network evaluates it.
pub fn double_dqn_target<T: Real>(local: &Mlp<T>, target: &Mlp<T>, exp: &Experience<T>, gamma: T) -> Result<T> {
    if exp.done {
        return Ok(exp.reward);
    }
    let best = argmax(&local.predict(&exp.bootstrap_state)?);
    let q = target.predict(&exp.bootstrap_state)?[best];
    Ok(exp.reward + gamma.powi(exp.steps as i32) * q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnOutcome {
    /// Fewer experiences than one batch.
    NotReady,
    Learned { mean_abs_td: f64, synced: bool },
}

/// One agent's learner: local and target networks plus its replay memory.
#[derive(Debug, Clone)]
pub struct DqnLearner<T> {
    pub local: Mlp<T>,
    pub target: Mlp<T>,
    pub memory: ReplayMemory<T>,
    pub config: DqnConfig,
    learn_steps: u64,
    grads: Gradients<T>,
}

impl<T: Real> DqnLearner<T> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, actions: usize, config: DqnConfig, init_rng: &mut R) -> Result<Self> {
        let bad = config.invalid_keys();
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let local = Mlp::new(&config.layer_dims(input_dim, actions), &[config.input_dropout], init_rng)?;
        Ok(Self::with_network(local, config))
    }

    pub fn with_network(local: Mlp<T>, config: DqnConfig) -> Self {
        let memory = ReplayMemory::new(config.memory_capacity, T::of(config.alpha_per), T::of(config.eps_priority));
        Self { target: local.clone(), grads: local.zero_gradients(), local, memory, config, learn_steps: 0 }
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon.at(self.learn_steps)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[T], eps: f64, rng: &mut R) -> Result<usize> {
        select_action(&self.local, state, eps, rng)
    }

    /// Stores the n-step experience built from `window`.
    pub fn push_nstep(&mut self, window: &[Transition<T>]) -> Result<()> {
        let exp = nstep_experience(window, T::of(self.config.gamma))?;
        if exp.state.len() != self.local.input_dim() || exp.bootstrap_state.len() != self.local.input_dim() {
            return Err(Error::Shape { expected: self.local.input_dim(), got: exp.state.len() });
        }
        self.memory.push(exp);
        Ok(())
    }

    /// One prioritized minibatch SGD update on the squared TD error of the
    /// taken actions; re-prioritizes the sampled experiences and syncs the
    /// target network every `target_sync` steps.
    pub fn learn_step<R1: Rng + ?Sized, R2: Rng + ?Sized>(&mut self, replay_rng: &mut R1, dropout_rng: &mut R2) -> Result<LearnOutcome> {
        let b = self.config.batch_size;
        if self.memory.len() < b {
            return Ok(LearnOutcome::NotReady);
        }
        let batch = self.memory.sample(b, replay_rng).expect("non-empty memory");
        let gamma = T::of(self.config.gamma);
        let scale = T::of(2.0 / b as f64);
        self.grads.zero();
        let mut new_priorities = Vec::with_capacity(b);
        let mut abs_td = 0.0;
        let mut d_out = vec![T::zero(); self.local.output_dim()];
        for &i in &batch {
            let exp = self.memory.get(i);
            let y = double_dqn_target(&self.local, &self.target, exp, gamma)?;
            let cache = self.local.forward_train(&exp.state, dropout_rng)?;
            let q = cache.output()[exp.action];
            let td = y - q;
            d_out.iter_mut().for_each(|d| *d = T::zero());
            d_out[exp.action] = -scale * td;
            self.local.backward(&cache, &d_out, &mut self.grads)?;
            abs_td += td.abs().as_f64();
            new_priorities.push((i, self.memory.priority_from_td(td)));
        }
        self.local.sgd_step(&self.grads, T::of(self.config.learning_rate))?;
        for (i, p) in new_priorities {
            self.memory.update_priority(i, p);
        }
        self.learn_steps += 1;
        let synced = self.learn_steps.is_multiple_of(self.config.target_sync);
        if synced {
            self.local.copy_into(&mut self.target)?;
        }
        Ok(LearnOutcome::Learned { mean_abs_td: abs_td / b as f64, synced })
    }
}
