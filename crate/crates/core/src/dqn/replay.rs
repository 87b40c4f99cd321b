//! Proportional prioritized replay memory.

use rand::Rng;

use super::sum_tree::SumTree;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: usize,
    pub reward: T,
    pub next_state: Vec<T>,
    pub done: bool,
}

/// Replayable n-step record.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience<T> {
    pub state: Vec<T>,
    pub action: usize,
    /// Discounted reward over the window.
    pub reward: T,
    /// State the target bootstraps from.
    pub bootstrap_state: Vec<T>,
    pub done: bool,
    /// Window length `m`; the bootstrap is discounted by `gamma^m`.
    pub steps: usize,
}

/// Collapses a window of one-step transitions into an n-step experience:
/// `R = sum_k gamma^k r_k`, bootstrap from the last next-state, done if the
/// episode ended inside the window.
pub fn nstep_experience<T: Real>(window: &[Transition<T>], gamma: T) -> Result<Experience<T>> {
    let first = window.first().ok_or_else(|| Error::Usage("empty n-step window".into()))?;
    let mut reward = T::zero();
    let mut discount = T::one();
    let mut end = window.len();
    for (k, tr) in window.iter().enumerate() {
        reward += discount * tr.reward;
        discount *= gamma;
        if tr.done {
            end = k + 1;
            break;
        }
    }
    let last = &window[end - 1];
    Ok(Experience {
        state: first.state.clone(),
        action: first.action,
        reward,
        bootstrap_state: last.next_state.clone(),
        done: last.done,
        steps: end,
    })
}

#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    capacity: usize,
    data: Vec<Experience<T>>,
    /// Raw priorities `p_i`; the tree stores `p_i^alpha`.
    priorities: Vec<T>,
    tree: SumTree<T>,
    next: usize,
    alpha: T,
    max_priority: T,
    eps_priority: T,
}

impl<T: Real> ReplayMemory<T> {
    pub fn new(capacity: usize, alpha: T, eps_priority: T) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            data: Vec::new(),
            priorities: Vec::new(),
            tree: SumTree::new(capacity),
            next: 0,
            alpha,
            max_priority: T::one(),
            eps_priority,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Experience<T> {
        &self.data[i]
    }

    pub fn priority(&self, i: usize) -> T {
        self.priorities[i]
    }

    pub fn tree_total(&self) -> T {
        self.tree.total()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Sampling probability `p_i^alpha / sum_k p_k^alpha`.
    pub fn probability(&self, i: usize) -> T {
        self.tree.get(i) / self.tree.total()
    }

    /// Stores at the current maximum priority; evicts the oldest entry when full.
    pub fn push(&mut self, exp: Experience<T>) -> usize {
        self.push_with_priority(exp, self.max_priority)
    }

    pub fn push_with_priority(&mut self, exp: Experience<T>, priority: T) -> usize {
        let priority = priority.max(self.eps_priority);
        let slot = self.next;
        if self.data.len() < self.capacity {
            self.data.push(exp);
            self.priorities.push(priority);
        } else {
            self.data[slot] = exp;
            self.priorities[slot] = priority;
        }
        self.tree.set(slot, priority.powf(self.alpha));
        self.max_priority = self.max_priority.max(priority);
        self.next = (slot + 1) % self.capacity;
        slot
    }

    pub fn update_priority(&mut self, i: usize, priority: T) {
        let priority = priority.max(self.eps_priority);
        self.priorities[i] = priority;
        self.tree.set(i, priority.powf(self.alpha));
        self.max_priority = self.max_priority.max(priority);
    }

    /// `|delta| + eps_priority`.
    pub fn priority_from_td(&self, td: T) -> T {
        td.abs() + self.eps_priority
    }

    /// Draws `b` indices independently with probability proportional to
    /// `p_i^alpha`. `None` when the memory is empty.
    pub fn sample<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Option<Vec<usize>> {
        if self.data.is_empty() {
            return None;
        }
        let total = self.tree.total();
        Some(
            (0..b)
                .map(|_| {
                    let u = T::of(rng.random::<f64>());
                    self.tree.find(u * total).min(self.data.len() - 1)
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64, done: bool, s: f64) -> Transition<f64> {
        Transition { state: vec![s], action: 0, reward: r, next_state: vec![s + 1.0], done }
    }

    fn exp(tag: f64) -> Experience<f64> {
        Experience { state: vec![tag], action: 0, reward: 0.0, bootstrap_state: vec![tag], done: false, steps: 1 }
    }

    #[test]
    fn nstep_return() {
        let e = nstep_experience(&[tr(1.0, false, 0.0), tr(2.0, false, 1.0)], 0.5).unwrap();
        assert_eq!(e.reward, 2.0);
        assert_eq!(e.bootstrap_state, vec![2.0]);
        assert_eq!((e.done, e.steps), (false, 2));

        let one = nstep_experience(&[tr(3.0, false, 4.0)], 0.9).unwrap();
        assert_eq!(one, Experience { state: vec![4.0], action: 0, reward: 3.0, bootstrap_state: vec![5.0], done: false, steps: 1 });

        let term = nstep_experience(&[tr(1.0, true, 0.0), tr(5.0, false, 1.0)], 0.9).unwrap();
        assert_eq!((term.reward, term.done, term.steps), (1.0, true, 1));

        assert!(matches!(nstep_experience::<f64>(&[], 0.9), Err(Error::Usage(_))));
    }

    #[test]
    fn sampling_probabilities() {
        let mut m = ReplayMemory::new(8, 1.0, 1e-6);
        for (k, p) in [1.0, 1.0, 2.0].into_iter().enumerate() {
            let i = m.push(exp(k as f64));
            m.update_priority(i, p);
        }
        let probs: Vec<f64> = (0..3).map(|i| m.probability(i)).collect();
        assert_eq!(probs, vec![0.25, 0.25, 0.5]);

        let mut u = ReplayMemory::new(8, 0.0, 1e-6);
        for (k, p) in [1.0, 5.0, 9.0].into_iter().enumerate() {
            let i = u.push(exp(k as f64));
            u.update_priority(i, p);
        }
        for i in 0..3 {
            assert!((u.probability(i) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = ReplayMemory::<f64>::new(4, 1.0, 1e-6);
        assert!(m.sample(3, &mut rng).is_none());
        m.push(exp(0.0));
        assert_eq!(m.sample(5, &mut rng).unwrap(), vec![0; 5]);
    }

    #[test]
    fn new_entries_get_max_priority_and_oldest_is_evicted() {
        let mut m = ReplayMemory::<f64>::new(3, 1.0, 1e-6);
        m.push(exp(0.0));
        m.update_priority(0, 7.0);
        let i = m.push(exp(1.0));
        assert_eq!(m.priority(i), 7.0);
        m.push(exp(2.0));
        m.push(exp(3.0));
        assert_eq!(m.len(), 3);
        assert_eq!(m.get(0).state, vec![3.0]);
    }

    proptest! {
        #[test]
        fn tree_total_tracks_priorities(ops in prop::collection::vec((0u8..2, 0usize..64, 1e-6f64..50.0), 1..400), alpha in prop::sample::select(vec![0.0, 0.6, 1.0])) {
            let mut m = ReplayMemory::<f64>::new(37, alpha, 1e-6);
            for (op, i, p) in ops {
                if op == 0 || m.is_empty() {
                    m.push_with_priority(exp(p), p);
                } else {
                    m.update_priority(i % m.len(), p);
                }
                let direct: f64 = (0..m.len()).map(|k| m.priority(k).powf(alpha)).sum();
                prop_assert!((m.tree_total() - direct).abs() <= 1e-9 * direct);
            }
        }
    }
}
