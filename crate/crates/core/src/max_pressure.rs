//! Max Pressure signal control and its Longest-Queue-First reduction.
//!
//! The weight of movement `(l, m)` is its queue minus the split-weighted
//! queues of the movements leaving `m`; a stage's pressure is the
//! saturation-flow-weighted sum of its movements' weights, and the stage with
//! the highest pressure is requested. Ties keep the current stage.

use crate::microsim::Simulator;
use crate::scenario::LinkId;

pub const DEFAULT_SATURATION_FLOW: f64 = 0.5;

/// One movement `(m, n)` leaving the downstream link of a movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownstreamTerm {
    pub to: LinkId,
    /// `p_{m,n}`
    pub split: f64,
    /// `q_{m,n}`
    pub queue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Movement {
    pub from: LinkId,
    pub to: LinkId,
    pub queue: f64,
    pub saturation_flow: f64,
    /// Empty when `to` leaves the network.
    pub downstream: Vec<DownstreamTerm>,
}

/// Movements of one node and the movements released by each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MovementState {
    pub movements: Vec<Movement>,
    pub stages: Vec<Vec<usize>>,
}

impl MovementState {
    /// Measures the movements at `node` from the simulator. Splits `p_{m,n}`
    /// come from the next-but-one link of all vehicles queued towards `m`,
    /// falling back to a uniform split when none are queued.
    pub fn from_simulator(sim: &Simulator, node: usize, saturation_flow: f64) -> Self {
        let net = &sim.net;
        let incoming = net.incoming[node];
        let mut movements = Vec::new();
        let mut stages = Vec::new();
        for &l in &incoming {
            let mut stage = Vec::new();
            for &m in net.successors(l) {
                let queue = sim.link_vehicles(l).filter(|v| v.is_stopped() && v.next_link() == Some(m)).count();
                let towards_m: Vec<_> = incoming
                    .iter()
                    .flat_map(|&k| sim.link_vehicles(k))
                    .filter(|v| v.is_stopped() && v.next_link() == Some(m))
                    .collect();
                let outs = net.successors(m);
                let downstream = outs
                    .iter()
                    .map(|&n| {
                        let split = if towards_m.is_empty() {
                            1.0 / outs.len() as f64
                        } else {
                            let k = towards_m.iter().filter(|v| v.route.get(v.route_pos + 2) == Some(&n)).count();
                            k as f64 / towards_m.len() as f64
                        };
                        let queue = sim.link_vehicles(m).filter(|v| v.is_stopped() && v.next_link() == Some(n)).count();
                        DownstreamTerm { to: n, split, queue: queue as f64 }
                    })
                    .collect();
                stage.push(movements.len());
                movements.push(Movement { from: l, to: m, queue: queue as f64, saturation_flow, downstream });
            }
            stages.push(stage);
        }
        Self { movements, stages }
    }
}

/// `w_{l,m} = q_{l,m} - sum_n p_{m,n} q_{m,n}`
pub fn movement_weight(m: &Movement) -> f64 {
    m.queue - m.downstream.iter().map(|d| d.split * d.queue).sum::<f64>()
}

/// `gamma_sigma = sum_{(l,m) in sigma} w_{l,m} s_{l,m}`
pub fn stage_pressure(state: &MovementState, stage: usize) -> f64 {
    state.stages[stage].iter().map(|&i| movement_weight(&state.movements[i]) * state.movements[i].saturation_flow).sum()
}

/// Index of the largest value; ties keep `current` when it is among the
/// maxima, otherwise the lowest index wins. Values within rounding noise of
/// the maximum count as tied.
fn argmax_hold(values: &[f64], current: usize) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + best.abs());
    let tied = |v: f64| best - v <= tol;
    if values.get(current).is_some_and(|&v| tied(v)) {
        return current;
    }
    values.iter().position(|&v| tied(v)).unwrap_or(current)
}

pub fn select_stage(state: &MovementState, current_stage: usize) -> usize {
    let pressures: Vec<f64> = (0..state.stages.len()).map(|s| stage_pressure(state, s)).collect();
    argmax_hold(&pressures, current_stage)
}

/// Longest Queue First over per-approach lane queues.
pub fn lqf_select(approach_queues: &[Vec<f64>], current_stage: usize) -> usize {
    let totals: Vec<f64> = approach_queues.iter().map(|q| q.iter().sum()).collect();
    argmax_hold(&totals, current_stage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn movement(queue: f64, down: &[(f64, f64)]) -> Movement {
        Movement {
            from: 0,
            to: 1,
            queue,
            saturation_flow: 0.5,
            downstream: down.iter().map(|&(split, queue)| DownstreamTerm { to: 2, split, queue }).collect(),
        }
    }

    #[test]
    fn weight_by_hand() {
        assert_eq!(movement_weight(&movement(5.0, &[(0.5, 2.0), (0.5, 4.0)])), 2.0);
        assert_eq!(movement_weight(&movement(0.0, &[(0.5, 0.0), (0.5, 0.0)])), 0.0);
        assert!(movement_weight(&movement(0.0, &[(1.0, 3.0)])) < 0.0);
        assert_eq!(movement_weight(&movement(4.0, &[])), 4.0);
    }

    #[test]
    fn pressure_by_hand() {
        let state = MovementState {
            movements: vec![movement(2.0, &[]), movement(1.0, &[]), movement(0.0, &[])],
            stages: vec![vec![0, 1], vec![2]],
        };
        assert_eq!(stage_pressure(&state, 0), 1.5);
        assert_eq!(select_stage(&state, 1), 0);
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(argmax_hold(&[1.5, 3.0], 0), 1);
        assert_eq!(argmax_hold(&[2.0, 2.0], 1), 1);
        assert_eq!(argmax_hold(&[2.0, 2.0], 0), 0);
    }

    #[test]
    fn lqf_by_hand() {
        assert_eq!(lqf_select(&[vec![3.0, 2.0], vec![4.0, 4.0]], 0), 1);
        assert_eq!(lqf_select(&[vec![0.0, 0.0], vec![0.0, 0.0]], 1), 1);
    }

    #[test]
    fn doubling_saturation_keeps_choice() {
        let mut state = MovementState {
            movements: vec![movement(3.0, &[(1.0, 1.0)]), movement(1.0, &[(1.0, 0.0)])],
            stages: vec![vec![0], vec![1]],
        };
        let p: Vec<f64> = (0..2).map(|s| stage_pressure(&state, s)).collect();
        let pick = select_stage(&state, 1);
        for m in &mut state.movements {
            m.saturation_flow *= 2.0;
        }
        for s in 0..2 {
            assert_eq!(stage_pressure(&state, s), 2.0 * p[s]);
        }
        assert_eq!(select_stage(&state, 1), pick);
    }
}
