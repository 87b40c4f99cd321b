//! Tabular reference algorithms on finite MDPs: Monte-Carlo evaluation and
//! control, SARSA, Q-learning, and value iteration as an exact oracle.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{argmax, Real};

/// `transitions[s][a]` lists `(next_state, probability, reward)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp<T> {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<(usize, T, T)>>>,
    pub gamma: T,
    pub terminal: Vec<bool>,
    pub start: usize,
}

impl<T: Real> FiniteMdp<T> {
    pub fn new(n_states: usize, n_actions: usize, gamma: T, start: usize) -> Self {
        Self {
            n_states,
            n_actions,
            transitions: vec![vec![Vec::new(); n_actions]; n_states],
            gamma,
            terminal: vec![false; n_states],
            start,
        }
    }

    pub fn add(&mut self, s: usize, a: usize, next: usize, prob: T, reward: T) -> &mut Self {
        self.transitions[s][a].push((next, prob, reward));
        self
    }

    pub fn set_terminal(&mut self, s: usize) -> &mut Self {
        self.terminal[s] = true;
        self
    }

    /// Checks that every non-terminal `(s, a)` has outgoing probability 1.
    pub fn validate(&self) -> Result<()> {
        for s in (0..self.n_states).filter(|&s| !self.terminal[s]) {
            for a in 0..self.n_actions {
                let total: f64 = self.transitions[s][a].iter().map(|t| t.1.as_f64()).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("T({s},{a},.) sums to {total}")));
                }
                if self.transitions[s][a].iter().any(|t| !t.2.is_finite() || t.0 >= self.n_states) {
                    return Err(Error::Config(format!("bad transition at ({s},{a})")));
                }
            }
        }
        Ok(())
    }

    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, T) {
        let outcomes = &self.transitions[s][a];
        if outcomes.len() == 1 {
            return (outcomes[0].0, outcomes[0].2);
        }
        let mut u = rng.random::<f64>();
        for &(next, p, r) in outcomes {
            let p = p.as_f64();
            if u < p {
                return (next, r);
            }
            u -= p;
        }
        let last = outcomes[outcomes.len() - 1];
        (last.0, last.2)
    }

    /// One state, two actions paying 0 and 1, then terminal.
    pub fn bandit() -> Self {
        let mut m = Self::new(2, 2, T::of(0.9), 0);
        m.add(0, 0, 1, T::one(), T::zero()).add(0, 1, 1, T::one(), T::one()).set_terminal(1);
        m
    }

    /// `s0 -> s1 -> terminal` under action 0 ("go") with rewards 0 then 1;
    /// action 1 ("stay") loops in place with reward 0. Discount 0.9.
    pub fn chain() -> Self {
        let mut m = Self::new(3, 2, T::of(0.9), 0);
        m.add(0, 0, 1, T::one(), T::zero())
            .add(1, 0, 2, T::one(), T::one())
            .add(0, 1, 0, T::one(), T::zero())
            .add(1, 1, 1, T::one(), T::zero())
            .set_terminal(2);
        m
    }

    /// 4x4 grid, start in the top-left corner, goal (terminal) in the
    /// bottom-right. Actions up/down/left/right; moves into a wall stay put.
    /// Reward 1 on reaching the goal, 0 otherwise; discount 0.9.
    pub fn gridworld() -> Self {
        let n = 4;
        let goal = n * n - 1;
        let mut m = Self::new(n * n, 4, T::of(0.9), 0);
        for s in 0..n * n {
            if s == goal {
                continue;
            }
            let (r, c) = (s / n, s % n);
            let moves = [
                (r.saturating_sub(1), c),
                ((r + 1).min(n - 1), c),
                (r, c.saturating_sub(1)),
                (r, (c + 1).min(n - 1)),
            ];
            for (a, (nr, nc)) in moves.into_iter().enumerate() {
                let next = nr * n + nc;
                let reward = if next == goal { T::one() } else { T::zero() };
                m.add(s, a, next, T::one(), reward);
            }
        }
        m.set_terminal(goal);
        m
    }

    /// Two actions with identical stochastic dynamics.
    pub fn symmetric() -> Self {
        let mut m = Self::new(3, 2, T::of(0.8), 0);
        for a in 0..2 {
            m.add(0, a, 1, T::of(0.5), T::one()).add(0, a, 2, T::of(0.5), T::zero());
            m.add(1, a, 0, T::of(0.3), T::of(2.0)).add(1, a, 2, T::of(0.7), T::zero());
        }
        m.set_terminal(2);
        m
    }
}

/// Action values with visit counts and return accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<T> {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<T>,
    pub visits: Vec<u64>,
    pub returns: Vec<T>,
}

impl<T: Real> QTable<T> {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self { n_states, n_actions, values: vec![T::zero(); n], visits: vec![0; n], returns: vec![T::zero(); n] }
    }

    fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn get(&self, s: usize, a: usize) -> T {
        self.values[self.idx(s, a)]
    }

    pub fn set(&mut self, s: usize, a: usize, v: T) {
        let i = self.idx(s, a);
        self.values[i] = v;
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[self.idx(s, a)]
    }

    /// Monte-Carlo estimate; `None` for never-visited pairs.
    pub fn estimate(&self, s: usize, a: usize) -> Option<T> {
        (self.visits(s, a) > 0).then(|| self.get(s, a))
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn max(&self, s: usize) -> T {
        self.row(s).iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| self.greedy(s)).collect()
    }

    /// Max-norm distance over the non-terminal states of `mdp`.
    pub fn max_norm_diff(&self, other: &Self, mdp: &FiniteMdp<T>) -> T {
        let mut d = T::zero();
        for s in (0..self.n_states).filter(|&s| !mdp.terminal[s]) {
            for a in 0..self.n_actions {
                d = d.max((self.get(s, a) - other.get(s, a)).abs());
            }
        }
        d
    }
}

/// Stochastic policy `pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        Self {
            probs: actions
                .iter()
                .map(|&a| (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    /// ε-greedy with respect to `q`.
    pub fn epsilon_greedy<T: Real>(q: &QTable<T>, eps: f64) -> Self {
        let k = q.n_actions as f64;
        Self {
            probs: (0..q.n_states)
                .map(|s| {
                    let g = q.greedy(s);
                    (0..q.n_actions).map(|a| eps / k + if a == g { 1.0 - eps } else { 0.0 }).collect()
                })
                .collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let row = &self.probs[s];
        let mut u = rng.random::<f64>();
        for (a, &p) in row.iter().enumerate() {
            if u < p {
                return a;
            }
            u -= p;
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<T> {
    pub state: usize,
    pub action: usize,
    pub reward: T,
}

pub type Episode<T> = Vec<Step<T>>;

pub fn generate_episode<T: Real, R: Rng + ?Sized>(mdp: &FiniteMdp<T>, policy: &Policy, max_steps: usize, rng: &mut R) -> Episode<T> {
    let mut s = mdp.start;
    let mut ep = Vec::new();
    while !mdp.terminal[s] && ep.len() < max_steps {
        let a = policy.sample(s, rng);
        let (next, r) = mdp.step(s, a, rng);
        ep.push(Step { state: s, action: a, reward: r });
        s = next;
    }
    ep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisitMode {
    FirstVisit,
    EveryVisit,
}

/// Adds the returns of `episodes` into `q` (values become `Returns / N`).
pub fn mc_accumulate<T: Real>(q: &mut QTable<T>, episodes: &[Episode<T>], gamma: T, mode: VisitMode) {
    for ep in episodes {
        // G_t = r_t + gamma * G_{t+1}, computed backwards
        let mut returns = vec![T::zero(); ep.len()];
        let mut g = T::zero();
        for (t, step) in ep.iter().enumerate().rev() {
            g = step.reward + gamma * g;
            returns[t] = g;
        }
        let mut seen = vec![false; q.values.len()];
        for (t, step) in ep.iter().enumerate() {
            let i = q.idx(step.state, step.action);
            if mode == VisitMode::FirstVisit && std::mem::replace(&mut seen[i], true) {
                continue;
            }
            q.returns[i] += returns[t];
            q.visits[i] += 1;
        }
    }
    for i in 0..q.values.len() {
        if q.visits[i] > 0 {
            q.values[i] = q.returns[i] / T::of(q.visits[i] as f64);
        }
    }
}

/// Monte-Carlo estimate from already-generated episodes.
pub fn mc_estimate<T: Real>(n_states: usize, n_actions: usize, episodes: &[Episode<T>], gamma: T, mode: VisitMode) -> QTable<T> {
    let mut q = QTable::new(n_states, n_actions);
    mc_accumulate(&mut q, episodes, gamma, mode);
    q
}

const MAX_EPISODE_STEPS: usize = 10_000;

pub fn mc_evaluate<T: Real, R: Rng + ?Sized>(mdp: &FiniteMdp<T>, policy: &Policy, num_episodes: usize, mode: VisitMode, rng: &mut R) -> QTable<T> {
    let episodes: Vec<_> = (0..num_episodes).map(|_| generate_episode(mdp, policy, MAX_EPISODE_STEPS, rng)).collect();
    mc_estimate(mdp.n_states, mdp.n_actions, &episodes, mdp.gamma, mode)
}

/// First-visit Monte-Carlo control: alternate ε-greedy evaluation batches
/// with greedy improvement. Returns the final greedy policy and values.
pub fn mc_control<T: Real, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    eps: f64,
    num_iterations: usize,
    num_episodes: usize,
    rng: &mut R,
) -> (Vec<usize>, QTable<T>) {
    let mut q = QTable::new(mdp.n_states, mdp.n_actions);
    for _ in 0..num_iterations {
        let policy = Policy::epsilon_greedy(&q, eps);
        let episodes: Vec<_> = (0..num_episodes).map(|_| generate_episode(mdp, &policy, MAX_EPISODE_STEPS, rng)).collect();
        mc_accumulate(&mut q, &episodes, mdp.gamma, VisitMode::FirstVisit);
    }
    (q.greedy_policy(), q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `1 / (1 + visits(s, a))`.
    InverseVisits,
}

/// Which next action the SARSA target uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    /// The ε-greedy action that will actually be taken.
    OnPolicy,
    /// The greedy action; makes the update identical to Q-learning's.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdParams {
    pub alpha: StepSize,
    pub epsilon: f64,
    pub episodes: usize,
    pub max_steps: usize,
    /// Keep every `(s, a, r, s')` and value after each update.
    pub record: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdRun<T> {
    pub q: QTable<T>,
    pub trajectory: Vec<(usize, usize, T, usize)>,
    pub value_history: Vec<T>,
}

pub fn epsilon_greedy_action<T: Real, R: Rng + ?Sized>(q: &QTable<T>, s: usize, eps: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..q.n_actions)
    } else {
        q.greedy(s)
    }
}

fn step_size<T: Real>(q: &QTable<T>, s: usize, a: usize, alpha: StepSize) -> T {
    match alpha {
        StepSize::Constant(a) => T::of(a),
        StepSize::InverseVisits => T::one() / T::of(1.0 + q.visits(s, a) as f64),
    }
}

/// `Q(s,a) += alpha (r + gamma Q(s',a') - Q(s,a))`; `next = None` at terminal.
pub fn sarsa_update<T: Real>(q: &mut QTable<T>, s: usize, a: usize, r: T, next: Option<(usize, usize)>, alpha: T, gamma: T) {
    let target = r + next.map_or(T::zero(), |(s2, a2)| gamma * q.get(s2, a2));
    let v = q.get(s, a);
    q.set(s, a, v + alpha * (target - v));
}

/// `Q(s,a) += alpha (r + gamma max_b Q(s',b) - Q(s,a))`; `next = None` at terminal.
pub fn q_learning_update<T: Real>(q: &mut QTable<T>, s: usize, a: usize, r: T, next: Option<usize>, alpha: T, gamma: T) {
    let target = r + next.map_or(T::zero(), |s2| gamma * q.max(s2));
    let v = q.get(s, a);
    q.set(s, a, v + alpha * (target - v));
}

pub fn sarsa<T: Real, R: Rng + ?Sized>(mdp: &FiniteMdp<T>, params: TdParams, prediction: Prediction, rng: &mut R) -> TdRun<T> {
    let mut q = QTable::new(mdp.n_states, mdp.n_actions);
    let mut run = TdRun { q: q.clone(), trajectory: Vec::new(), value_history: Vec::new() };
    for _ in 0..params.episodes {
        let mut s = mdp.start;
        let mut a = epsilon_greedy_action(&q, s, params.epsilon, rng);
        let mut steps = 0;
        while !mdp.terminal[s] && steps < params.max_steps {
            let (s2, r) = mdp.step(s, a, rng);
            let alpha = step_size(&q, s, a, params.alpha);
            let terminal = mdp.terminal[s2];
            let a2 = match prediction {
                Prediction::OnPolicy => {
                    let a2 = if terminal { 0 } else { epsilon_greedy_action(&q, s2, params.epsilon, rng) };
                    sarsa_update(&mut q, s, a, r, (!terminal).then_some((s2, a2)), alpha, mdp.gamma);
                    a2
                }
                Prediction::Greedy => {
                    let g = q.greedy(s2);
                    sarsa_update(&mut q, s, a, r, (!terminal).then_some((s2, g)), alpha, mdp.gamma);
                    if terminal { 0 } else { epsilon_greedy_action(&q, s2, params.epsilon, rng) }
                }
            };
            let i = q.idx(s, a);
            q.visits[i] += 1;
            if params.record {
                run.trajectory.push((s, a, r, s2));
                run.value_history.push(q.get(s, a));
            }
            s = s2;
            a = a2;
            steps += 1;
        }
    }
    run.q = q;
    run
}

pub fn q_learning<T: Real, R: Rng + ?Sized>(mdp: &FiniteMdp<T>, params: TdParams, rng: &mut R) -> TdRun<T> {
    let mut q = QTable::new(mdp.n_states, mdp.n_actions);
    let mut run = TdRun { q: q.clone(), trajectory: Vec::new(), value_history: Vec::new() };
    for _ in 0..params.episodes {
        let mut s = mdp.start;
        let mut a = epsilon_greedy_action(&q, s, params.epsilon, rng);
        let mut steps = 0;
        while !mdp.terminal[s] && steps < params.max_steps {
            let (s2, r) = mdp.step(s, a, rng);
            let alpha = step_size(&q, s, a, params.alpha);
            let terminal = mdp.terminal[s2];
            q_learning_update(&mut q, s, a, r, (!terminal).then_some(s2), alpha, mdp.gamma);
            let i = q.idx(s, a);
            q.visits[i] += 1;
            if params.record {
                run.trajectory.push((s, a, r, s2));
                run.value_history.push(q.get(s, a));
            }
            if !terminal {
                a = epsilon_greedy_action(&q, s2, params.epsilon, rng);
            }
            s = s2;
            steps += 1;
        }
    }
    run.q = q;
    run
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimal<T> {
    pub v: Vec<T>,
    pub q: QTable<T>,
    pub policy: Vec<usize>,
}

/// Bellman-optimality fixed point by synchronous sweeps, stopping once the
/// largest change is below `tolerance`.
pub fn value_iteration<T: Real>(mdp: &FiniteMdp<T>, tolerance: T, max_sweeps: usize) -> Result<Optimal<T>> {
    let mut v = vec![T::zero(); mdp.n_states];
    let mut q = QTable::new(mdp.n_states, mdp.n_actions);
    for _ in 0..max_sweeps {
        for s in (0..mdp.n_states).filter(|&s| !mdp.terminal[s]) {
            for a in 0..mdp.n_actions {
                let val = mdp.transitions[s][a]
                    .iter()
                    .map(|&(s2, p, r)| p * (r + mdp.gamma * v[s2]))
                    .fold(T::zero(), |acc, x| acc + x);
                q.set(s, a, val);
            }
        }
        let mut delta = T::zero();
        for s in (0..mdp.n_states).filter(|&s| !mdp.terminal[s]) {
            let new = q.max(s);
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if delta < tolerance {
            let policy = q.greedy_policy();
            return Ok(Optimal { v, q, policy });
        }
    }
    Err(Error::NoConvergence(max_sweeps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn bundled_mdps_are_valid() {
        FiniteMdp::<f64>::bandit().validate().unwrap();
        FiniteMdp::<f64>::chain().validate().unwrap();
        FiniteMdp::<f64>::gridworld().validate().unwrap();
        FiniteMdp::<f64>::symmetric().validate().unwrap();
        let mut bad = FiniteMdp::<f64>::new(2, 1, 0.9, 0);
        bad.add(0, 0, 1, 0.5, 0.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn discounted_return_by_hand() {
        let ep = vec![Step { state: 0, action: 0, reward: 1.0 }, Step { state: 1, action: 0, reward: 2.0 }];
        let q = mc_estimate(2, 1, &[ep], 0.5, VisitMode::FirstVisit);
        assert_eq!(q.estimate(0, 0), Some(2.0));
        assert_eq!(q.estimate(1, 0), Some(2.0));
    }

    #[test]
    fn undiscounted_terminal_reward() {
        let ep = vec![
            Step { state: 0, action: 0, reward: 0.0 },
            Step { state: 1, action: 0, reward: 0.0 },
            Step { state: 2, action: 1, reward: 1.0 },
        ];
        let q = mc_estimate(3, 2, &[ep], 1.0, VisitMode::EveryVisit);
        assert_eq!(q.estimate(0, 0), Some(1.0));
        assert_eq!(q.estimate(1, 0), Some(1.0));
        assert_eq!(q.estimate(2, 1), Some(1.0));
        assert_eq!(q.estimate(2, 0), None);
    }

    #[test]
    fn first_vs_every_visit() {
        let ep = vec![Step { state: 0, action: 0, reward: 1.0 }, Step { state: 0, action: 0, reward: 2.0 }];
        let first = mc_estimate(1, 1, &[ep.clone()], 1.0, VisitMode::FirstVisit);
        let every = mc_estimate(1, 1, &[ep], 1.0, VisitMode::EveryVisit);
        assert_eq!(first.estimate(0, 0), Some(3.0));
        assert_eq!(every.estimate(0, 0), Some(2.5));
    }

    #[test]
    fn visit_modes_agree_without_repeats() {
        let mdp = FiniteMdp::<f64>::gridworld();
        // always down then right: no state repeats
        let mut actions = vec![1; 16];
        for s in 12..16 {
            actions[s] = 3;
        }
        let pol = Policy::deterministic(&actions, 4);
        let a = mc_evaluate(&mdp, &pol, 20, VisitMode::FirstVisit, &mut rng(1));
        let b = mc_evaluate(&mdp, &pol, 20, VisitMode::EveryVisit, &mut rng(1));
        assert_eq!(a, b);
    }

    #[test]
    fn mc_control_bandit_and_chain() {
        let bandit = FiniteMdp::<f64>::bandit();
        let (pol, _) = mc_control(&bandit, 0.2, 20, 20, &mut rng(2));
        assert_eq!(pol[0], 1);

        let chain = FiniteMdp::<f64>::chain();
        let oracle = value_iteration(&chain, 1e-12, 10_000).unwrap();
        let (pol, _) = mc_control(&chain, 0.2, 50, 50, &mut rng(3));
        assert_eq!(pol[0], oracle.policy[0]);
        assert_eq!(pol[1], oracle.policy[1]);
    }

    #[test]
    fn greedy_without_exploration_can_get_trapped() {
        // with eps = 0 and ties broken toward action 0, the reward-1 arm is never tried
        let bandit = FiniteMdp::<f64>::bandit();
        let (pol, q) = mc_control(&bandit, 0.0, 10, 10, &mut rng(4));
        assert_eq!(pol[0], 0);
        assert_eq!(q.estimate(0, 1), None);
    }

    #[test]
    fn single_updates_by_hand() {
        let mut q = QTable::<f64>::new(2, 1);
        sarsa_update(&mut q, 0, 0, 1.0, Some((1, 0)), 0.5, 0.9);
        assert_eq!(q.get(0, 0), 0.5);
        let mut z = QTable::<f64>::new(2, 1);
        for _ in 0..10 {
            sarsa_update(&mut z, 0, 0, 1.0, Some((1, 0)), 0.0, 0.9);
        }
        assert_eq!(z.get(0, 0), 0.0);
        let mut t = QTable::<f64>::new(2, 2);
        t.set(1, 1, 5.0);
        q_learning_update(&mut t, 0, 0, 2.0, None, 1.0, 0.9);
        assert_eq!(t.get(0, 0), 2.0);
        q_learning_update(&mut t, 0, 1, 2.0, Some(1), 1.0, 0.9);
        assert_eq!(t.get(0, 1), 2.0 + 0.9 * 5.0);
    }

    #[test]
    fn value_iteration_oracles() {
        let b = value_iteration(&FiniteMdp::<f64>::bandit(), 1e-12, 100).unwrap();
        assert_eq!(b.q.row(0), &[0.0, 1.0]);
        let c = value_iteration(&FiniteMdp::<f64>::chain(), 1e-12, 10_000).unwrap();
        assert!((c.q.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((c.q.get(0, 0) - 0.9).abs() < 1e-12);
        let s = value_iteration(&FiniteMdp::<f64>::symmetric(), 1e-12, 10_000).unwrap();
        assert_eq!(s.q.get(0, 0), s.q.get(0, 1));
        assert_eq!(s.q.get(1, 0), s.q.get(1, 1));
        assert!(matches!(value_iteration(&FiniteMdp::<f64>::chain(), 1e-12, 2), Err(Error::NoConvergence(2))));
    }

    #[test]
    fn q_learning_terminal_and_alpha_zero() {
        let params = TdParams { alpha: StepSize::Constant(0.0), epsilon: 0.5, episodes: 50, max_steps: 100, record: false };
        let run = q_learning(&FiniteMdp::<f64>::chain(), params, &mut rng(5));
        assert!(run.q.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gridworld_greedy_path_is_shortest() {
        let mdp = FiniteMdp::<f64>::gridworld();
        let params = TdParams { alpha: StepSize::InverseVisits, epsilon: 1.0, episodes: 3000, max_steps: 1000, record: false };
        let run = q_learning(&mdp, params, &mut rng(6));
        // breadth-first search distances to the goal
        let mut dist = vec![usize::MAX; 16];
        dist[15] = 0;
        let mut frontier = vec![15];
        while let Some(g) = frontier.pop() {
            for s in 0..16 {
                if mdp.terminal[s] {
                    continue;
                }
                for a in 0..4 {
                    if mdp.transitions[s][a][0].0 == g && dist[s] == usize::MAX {
                        dist[s] = dist[g] + 1;
                        frontier.insert(0, s);
                    }
                }
            }
        }
        for start in 0..15 {
            let mut s = start;
            let mut steps = 0;
            while s != 15 && steps < 50 {
                s = mdp.transitions[s][run.q.greedy(s)][0].0;
                steps += 1;
            }
            assert_eq!(steps, dist[start], "from {start}");
        }
    }
}
