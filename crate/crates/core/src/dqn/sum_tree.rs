//! Binary sum tree over leaf weights for proportional sampling.

use crate::scalar::Real;

/// Fixed-capacity sum tree. Internal nodes are recomputed from their
/// children on every update, so totals do not drift.
#[derive(Debug, Clone)]
pub struct SumTree<T> {
    capacity: usize,
    leaves: usize,
    nodes: Vec<T>,
}

impl<T: Real> SumTree<T> {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self { capacity, leaves, nodes: vec![T::zero(); 2 * leaves] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> T {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> T {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: T) {
        assert!(i < self.capacity, "leaf {i} out of range");
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass` (clamped into range).
    pub fn find(&self, mut mass: T) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] <= T::zero() {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        (k - self.leaves).min(self.capacity - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_walks_prefix_sums() {
        let mut t = SumTree::<f64>::new(3);
        t.set(0, 1.0);
        t.set(1, 1.0);
        t.set(2, 2.0);
        assert_eq!(t.total(), 4.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 1);
        assert_eq!(t.find(2.0), 2);
        assert_eq!(t.find(3.999), 2);
        assert_eq!(t.find(10.0), 2);
    }

    #[test]
    fn zero_weight_leaves_never_found() {
        let mut t = SumTree::<f64>::new(5);
        t.set(3, 1.0);
        for m in [0.0, 0.3, 0.999] {
            assert_eq!(t.find(m), 3);
        }
    }
}
