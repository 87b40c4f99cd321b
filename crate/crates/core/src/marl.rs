//! Decentralized multi-agent control: observation and reward assembly and
//! the per-intersection agents of the IDQL, S2RL and S2R2L schemes.
//!
//! Every node runs its own learner. IDQL agents see only their local
//! observation; S2RL and S2R2L agents see their own observation followed by
//! those of their neighbors (north, south, west, east, absent ones skipped).
//! S2R2L additionally trains on the weighted reward
//! `phi_i = (n r_i + sum_j r_j) / (n + |J(i)|)`.

use std::collections::VecDeque;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dqn::{DqnConfig, DqnLearner, LearnOutcome, Transition};
use crate::error::{Error, Result};
use crate::microsim::{DetectorReading, Simulator};
use crate::nn::{read_checkpoint, write_checkpoint, Mlp};
use crate::rng::{labels, SeedStreams, StreamRng};
use crate::scenario::RoadNetwork;
use crate::signal::{SignalController, SignalEvent, STAGE_COUNT};

/// `2 * |entrance lanes| + |stages| + 1` for a two-approach, two-lane node.
pub const OBS_LEN: usize = 11;
pub const DEFAULT_SELF_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Idql,
    S2rl,
    #[default]
    S2r2l,
    MaxPressure,
    RandomBaseline,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Idql, Scheme::S2rl, Scheme::S2r2l, Scheme::MaxPressure, Scheme::RandomBaseline];

    pub fn is_marl(self) -> bool {
        matches!(self, Scheme::Idql | Scheme::S2rl | Scheme::S2r2l)
    }

    pub fn shares_state(self) -> bool {
        matches!(self, Scheme::S2rl | Scheme::S2r2l)
    }

    pub fn shares_reward(self) -> bool {
        self == Scheme::S2r2l
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Idql => "idql",
            Scheme::S2rl => "s2rl",
            Scheme::S2r2l => "s2r2l",
            Scheme::MaxPressure => "max_pressure",
            Scheme::RandomBaseline => "random_baseline",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Sign applied to the waiting-time difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSign {
    /// `r = -(w_now - w_prev)`: less added waiting is better.
    #[default]
    Negated,
    /// `r = w_now - w_prev`.
    Literal,
}

/// `<H_1..H_4, Q_1..Q_4, stage one-hot, elapsed ratio>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalObservation(pub [f64; OBS_LEN]);

impl LocalObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn assemble_observation(detector: &DetectorReading, signal: &SignalController) -> Result<LocalObservation> {
    let lanes = &detector.lanes;
    if 2 * lanes.len() + STAGE_COUNT + 1 != OBS_LEN {
        return Err(Error::Wiring(format!("expected 4 entrance lanes, got {}", lanes.len())));
    }
    let mut o = [0.0; OBS_LEN];
    for (k, lane) in lanes.iter().enumerate() {
        o[k] = lane.occupancy.clamp(0.0, 1.0);
        o[lanes.len() + k] = lane.queue.clamp(0.0, 1.0);
    }
    let h = signal.one_hot_stage();
    o[8] = h[0];
    o[9] = h[1];
    o[10] = signal.elapsed_ratio();
    Ok(LocalObservation(o))
}

/// Own observation followed by the neighbors' in the given order.
pub fn assemble_shared_state(own: &LocalObservation, neighbors: &[&LocalObservation]) -> Vec<f64> {
    let mut s = Vec::with_capacity(OBS_LEN * (neighbors.len() + 1));
    s.extend_from_slice(&own.0);
    for n in neighbors {
        s.extend_from_slice(&n.0);
    }
    s
}

pub fn local_reward(w_now: f64, w_prev: f64, sign: RewardSign) -> f64 {
    match sign {
        RewardSign::Negated => -(w_now - w_prev),
        RewardSign::Literal => w_now - w_prev,
    }
}

pub fn shared_reward(r_self: f64, neighbors: &[f64], self_weight: f64) -> Result<f64> {
    let denom = self_weight + neighbors.len() as f64;
    if self_weight < 0.0 || denom <= 0.0 {
        return Err(Error::Config(format!("self weight {self_weight} with {} neighbors", neighbors.len())));
    }
    // (n r + sum r_j) / (n + |J|), written as a correction to r so that large
    // n reproduces r without cancellation
    Ok(r_self + neighbors.iter().map(|r| r - r_self).sum::<f64>() / denom)
}

/// Rewards each agent trains on, given every node's local reward.
pub fn scheme_rewards(scheme: Scheme, local: &[f64], neighbors: &[Vec<usize>], self_weight: f64) -> Result<Vec<f64>> {
    if !scheme.shares_reward() {
        return Ok(local.to_vec());
    }
    local
        .iter()
        .zip(neighbors)
        .map(|(&r, nb)| {
            let rn: Vec<f64> = nb.iter().map(|&j| local[j]).collect();
            shared_reward(r, &rn, self_weight)
        })
        .collect()
}

/// Network input width of the agent at `node`.
pub fn input_width(scheme: Scheme, net: &RoadNetwork, node: usize) -> usize {
    if scheme.shares_state() {
        OBS_LEN * (net.neighbors(node).len() + 1)
    } else {
        OBS_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarlConfig {
    pub self_weight: f64,
    pub reward_sign: RewardSign,
    /// Multiplies every local reward before it reaches a learner.
    pub reward_scale: f64,
    /// Control steps between two learning updates.
    pub train_every: u64,
    pub dqn: DqnConfig,
}

impl Default for MarlConfig {
    fn default() -> Self {
        Self {
            self_weight: DEFAULT_SELF_WEIGHT,
            reward_sign: RewardSign::Negated,
            reward_scale: 1.0,
            train_every: 1,
            dqn: DqnConfig::default(),
        }
    }
}

impl MarlConfig {
    pub fn invalid_keys(&self) -> Vec<String> {
        let mut bad = self.dqn.invalid_keys();
        if !(self.self_weight >= 0.0 && self.self_weight.is_finite()) {
            bad.push("self_weight".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            bad.push("reward_scale".into());
        }
        if self.train_every == 0 {
            bad.push("train_every".into());
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AgentStats {
    pub reward_sum: f64,
    pub td_sum: f64,
    pub learn_updates: u64,
}

impl AgentStats {
    pub fn mean_td(&self) -> f64 {
        if self.learn_updates == 0 {
            0.0
        } else {
            self.td_sum / self.learn_updates as f64
        }
    }
}

pub struct Agent {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub learner: DqnLearner<f64>,
    pub stats: AgentStats,
    window: VecDeque<Transition<f64>>,
    last: Option<(Vec<f64>, usize)>,
    explore_rng: StreamRng,
    replay_rng: StreamRng,
    dropout_rng: StreamRng,
}

impl Agent {
    fn new(node: usize, neighbors: Vec<usize>, learner: DqnLearner<f64>, seeds: &SeedStreams) -> Self {
        let i = node as u64;
        Self {
            node,
            neighbors,
            learner,
            stats: AgentStats::default(),
            window: VecDeque::new(),
            last: None,
            explore_rng: seeds.stream(labels::EXPLORE, i),
            replay_rng: seeds.stream(labels::REPLAY, i),
            dropout_rng: seeds.stream(labels::DROPOUT, i),
        }
    }

    /// Buffered transitions not yet stored as n-step experiences.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    fn record(&mut self, next_state: &[f64], reward: f64) -> Result<()> {
        let Some((state, action)) = self.last.take() else { return Ok(()) };
        self.stats.reward_sum += reward;
        self.window.push_back(Transition { state, action, reward, next_state: next_state.to_vec(), done: false });
        if self.window.len() == self.learner.config.n_step {
            self.learner.push_nstep(self.window.make_contiguous())?;
            self.window.pop_front();
        }
        Ok(())
    }

    /// Stores every partial window left at the end of an episode; each one
    /// bootstraps from the last observed state.
    fn flush(&mut self) -> Result<()> {
        while !self.window.is_empty() {
            self.learner.push_nstep(self.window.make_contiguous())?;
            self.window.pop_front();
        }
        self.last = None;
        Ok(())
    }
}

/// What happened at one control step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlOutcome {
    pub states: Vec<Vec<f64>>,
    /// Reward each agent received for its previous action.
    pub rewards: Vec<f64>,
    /// Stage each node is committed to after the gate.
    pub actions: Vec<usize>,
    pub events: Vec<SignalEvent>,
}

/// The sixteen (one per node) independent agents of a MARL scheme.
pub struct AgentPool {
    pub scheme: Scheme,
    pub config: MarlConfig,
    pub agents: Vec<Agent>,
    /// Learning and exploration on; off means greedy evaluation.
    pub training: bool,
    prev_wait: Vec<f64>,
    control_steps: u64,
}

impl AgentPool {
    pub fn new(scheme: Scheme, config: MarlConfig, net: &RoadNetwork, seeds: &SeedStreams) -> Result<Self> {
        if !scheme.is_marl() {
            return Err(Error::Wiring(format!("{scheme} is not a learning scheme")));
        }
        let bad = config.invalid_keys();
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let agents = (0..net.node_count())
            .map(|node| {
                let mut init = seeds.stream(labels::INIT, node as u64);
                let learner = DqnLearner::new(input_width(scheme, net, node), STAGE_COUNT, config.dqn.clone(), &mut init)?;
                Ok(Agent::new(node, net.neighbors(node), learner, seeds))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scheme, config, agents, training: true, prev_wait: vec![0.0; net.node_count()], control_steps: 0 })
    }

    /// Replaces every agent's networks with the checkpoints in `dir`.
    pub fn load_checkpoints(&mut self, dir: &Path) -> Result<()> {
        for agent in &mut self.agents {
            let path = checkpoint_path(dir, agent.node);
            let file = File::open(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
            let net: Mlp<f64> = read_checkpoint(BufReader::new(file))?;
            let want = agent.learner.local.dims();
            if net.dims() != want {
                return Err(Error::Checkpoint(format!(
                    "{}: layer widths {:?}, expected {:?}",
                    path.display(),
                    net.dims(),
                    want
                )));
            }
            agent.learner.target = net.clone();
            agent.learner.local = net;
        }
        Ok(())
    }

    pub fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for agent in &self.agents {
            let file = File::create(checkpoint_path(dir, agent.node))?;
            write_checkpoint(&agent.learner.local, BufWriter::new(file))?;
        }
        Ok(())
    }

    /// Seeds the waiting-time baseline for the first reward of an episode.
    pub fn begin_episode(&mut self, last_interval_wait: &[f64]) {
        self.prev_wait = last_interval_wait.to_vec();
        for a in &mut self.agents {
            a.window.clear();
            a.last = None;
            a.stats = AgentStats::default();
        }
    }

    pub fn end_episode(&mut self) -> Result<()> {
        for a in &mut self.agents {
            if self.training {
                a.flush()?;
            } else {
                a.window.clear();
                a.last = None;
            }
        }
        Ok(())
    }

    pub fn observations(sim: &Simulator) -> Result<Vec<LocalObservation>> {
        (0..sim.net.node_count())
            .map(|n| assemble_observation(&sim.read_detectors(n), &sim.signals[n]))
            .collect()
    }

    pub fn states(&self, obs: &[LocalObservation]) -> Result<Vec<Vec<f64>>> {
        self.agents
            .iter()
            .map(|a| {
                let state = if self.scheme.shares_state() {
                    let nb: Vec<&LocalObservation> = a.neighbors.iter().map(|&j| &obs[j]).collect();
                    assemble_shared_state(&obs[a.node], &nb)
                } else {
                    obs[a.node].0.to_vec()
                };
                if state.len() != a.learner.local.input_dim() {
                    return Err(Error::Wiring(format!(
                        "node {} state width {} but network input {}",
                        a.node,
                        state.len(),
                        a.learner.local.input_dim()
                    )));
                }
                Ok(state)
            })
            .collect()
    }

    /// Local rewards from the interval just closed; advances the baseline.
    pub fn local_rewards(&mut self, interval_wait: &[f64]) -> Vec<f64> {
        let r = interval_wait
            .iter()
            .zip(&self.prev_wait)
            .map(|(&now, &prev)| self.config.reward_scale * local_reward(now, prev, self.config.reward_sign))
            .collect();
        self.prev_wait = interval_wait.to_vec();
        r
    }

    /// One synchronous decision of every agent at a control-step boundary.
    /// `interval_wait` is the per-node waiting of the interval just closed.
    pub fn control_step(&mut self, sim: &mut Simulator, interval_wait: &[f64]) -> Result<ControlOutcome> {
        let local = self.local_rewards(interval_wait);
        let neighbors: Vec<Vec<usize>> = self.agents.iter().map(|a| a.neighbors.clone()).collect();
        let rewards = scheme_rewards(self.scheme, &local, &neighbors, self.config.self_weight)?;
        let obs = Self::observations(sim)?;
        let states = self.states(&obs)?;

        for (a, state) in self.agents.iter_mut().zip(&states) {
            if self.training {
                a.record(state, rewards[a.node])?;
            } else if a.last.take().is_some() {
                a.stats.reward_sum += rewards[a.node];
            }
        }
        if self.training {
            self.control_steps += 1;
            if self.control_steps.is_multiple_of(self.config.train_every) {
                for a in &mut self.agents {
                    if let LearnOutcome::Learned { mean_abs_td, .. } = a.learner.learn_step(&mut a.replay_rng, &mut a.dropout_rng)? {
                        a.stats.td_sum += mean_abs_td;
                        a.stats.learn_updates += 1;
                    }
                }
            }
        }

        let mut actions = Vec::with_capacity(self.agents.len());
        let mut events = Vec::with_capacity(self.agents.len());
        for (a, state) in self.agents.iter_mut().zip(&states) {
            let signal = &mut sim.signals[a.node];
            let requested = if signal.accepts_request() {
                let eps = if self.training { a.learner.epsilon() } else { 0.0 };
                a.learner.act(state, eps, &mut a.explore_rng)?
            } else {
                signal.target_stage()
            };
            events.push(signal.apply_decision(requested)?);
            let effective = signal.target_stage();
            actions.push(effective);
            a.last = Some((state.clone(), effective));
        }
        Ok(ControlOutcome { states, rewards, actions, events })
    }
}

pub fn checkpoint_path(dir: &Path, node: usize) -> PathBuf {
    dir.join(format!("agent_{node:02}.ckpt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::LaneReading;
    use crate::signal::SignalTiming;

    fn reading(lanes: &[(usize, usize)]) -> DetectorReading {
        DetectorReading {
            lanes: lanes
                .iter()
                .map(|&(n, q)| LaneReading {
                    occupancy: crate::microsim::detector_ratio(n, 150.0),
                    queue: crate::microsim::detector_ratio(q, 150.0),
                    vehicles: n,
                    queued: q,
                })
                .collect(),
            interval_waiting_s: 0.0,
            interval_vehicles: 0,
        }
    }

    #[test]
    fn empty_node_observation() {
        let sig = SignalController::new(SignalTiming::default(), 0);
        let o = assemble_observation(&reading(&[(0, 0); 4]), &sig).unwrap();
        assert_eq!(o.0, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn occupancy_of_four_vehicles() {
        let sig = SignalController::new(SignalTiming::default(), 0);
        let o = assemble_observation(&reading(&[(4, 0), (0, 0), (0, 0), (0, 0)]), &sig).unwrap();
        assert!((o.0[0] - 28.0 / 150.0).abs() < 1e-12);
        assert_eq!(o.0[4], 0.0);
    }

    #[test]
    fn wrong_lane_count_is_wiring_error() {
        let sig = SignalController::new(SignalTiming::default(), 0);
        assert!(matches!(assemble_observation(&reading(&[(0, 0); 3]), &sig), Err(Error::Wiring(_))));
    }

    #[test]
    fn shared_state_layout() {
        let own = LocalObservation([0.5; OBS_LEN]);
        let nb = LocalObservation([0.25; OBS_LEN]);
        assert_eq!(assemble_shared_state(&own, &[]), own.0.to_vec());
        let s = assemble_shared_state(&own, &[&nb, &nb, &nb, &nb]);
        assert_eq!(s.len(), 55);
        assert_eq!(s[10], 0.5);
        assert_eq!(s[11], 0.25);
        assert_eq!(assemble_shared_state(&own, &[&nb, &nb]).len(), 33);
    }

    #[test]
    fn rewards_by_hand() {
        assert_eq!(local_reward(12.0, 8.0, RewardSign::Negated), -4.0);
        assert_eq!(local_reward(8.0, 12.0, RewardSign::Negated), 4.0);
        assert_eq!(local_reward(0.0, 0.0, RewardSign::Negated), 0.0);
        assert_eq!(local_reward(8.0, 12.0, RewardSign::Literal), -4.0);
        assert_eq!(shared_reward(-4.0, &[-2.0, -6.0], 2.0).unwrap(), -4.0);
        assert_eq!(shared_reward(9.0, &[1.0, 3.0], 0.0).unwrap(), 2.0);
        let phi = shared_reward(5.0, &[-10.0, 10.0, -10.0], 1000.0).unwrap();
        assert!((phi - 5.0).abs() < 0.05);
        assert!(shared_reward(1.0, &[], 0.0).is_err());
        assert!(shared_reward(1.0, &[1.0], -1.0).is_err());
    }

    #[test]
    fn widths_by_degree() {
        let net = RoadNetwork::default_grid();
        let mut widths: Vec<usize> = (0..16).map(|n| input_width(Scheme::S2r2l, &net, n)).collect();
        widths.sort();
        widths.dedup();
        assert_eq!(widths, vec![33, 44, 55]);
        assert!((0..16).all(|n| input_width(Scheme::Idql, &net, n) == 11));
    }

    #[test]
    fn scheme_parsing() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("S2R2L".parse::<Scheme>().unwrap(), Scheme::S2r2l);
        assert!("dqn".parse::<Scheme>().is_err());
    }

    #[test]
    fn pool_rejects_non_learning_scheme() {
        let net = RoadNetwork::default_grid();
        let seeds = SeedStreams::new(1);
        assert!(AgentPool::new(Scheme::MaxPressure, MarlConfig::default(), &net, &seeds).is_err());
        let bad = MarlConfig { train_every: 0, self_weight: -1.0, ..MarlConfig::default() };
        match AgentPool::new(Scheme::Idql, bad, &net, &seeds) {
            Err(Error::Validation(keys)) => assert_eq!(keys, vec!["self_weight".to_string(), "train_every".to_string()]),
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("accepted invalid config"),
        }
    }
}
