//! Two-stage signal heads with yellow/all-red transitions and the
//! min/max-green action gate.
//!
//! Stage 0 releases the eastbound approach (through + right), stage 1 the
//! southbound approach (through + left). Decisions arrive on control-step
//! boundaries; a switch spends the first `transition_s` seconds of the next
//! slot in yellow/all-red before the new stage's green timer starts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAGE_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalTiming {
    pub min_green_s: u32,
    pub max_green_s: u32,
    pub transition_s: u32,
    pub control_step_s: u32,
}

impl Default for SignalTiming {
    fn default() -> Self {
        Self { min_green_s: 10, max_green_s: 60, transition_s: 3, control_step_s: 5 }
    }
}

impl SignalTiming {
    pub fn validate(&self) -> Result<()> {
        if self.max_green_s < self.min_green_s {
            return Err(Error::Config(format!(
                "max green {} s below min green {} s",
                self.max_green_s, self.min_green_s
            )));
        }
        if self.control_step_s == 0 || self.transition_s >= self.control_step_s {
            return Err(Error::Config("transition must fit inside one control step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalEvent {
    /// A switch was requested before the minimum green elapsed.
    Hold,
    /// Same stage requested; green continues.
    Continue,
    Switch,
    /// Maximum green reached; switched regardless of the request.
    Forced,
    /// Decision arrived during a yellow/all-red transition and was ignored.
    Transition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalController {
    pub timing: SignalTiming,
    active_stage: usize,
    elapsed_green_s: u32,
    transition_remaining_s: u32,
    next_stage: usize,
}

impl SignalController {
    pub fn new(timing: SignalTiming, initial_stage: usize) -> Self {
        Self {
            timing,
            active_stage: initial_stage % STAGE_COUNT,
            elapsed_green_s: 0,
            transition_remaining_s: 0,
            next_stage: initial_stage % STAGE_COUNT,
        }
    }

    /// State with a given green age, for tests and what-if evaluation.
    pub fn with_elapsed(timing: SignalTiming, stage: usize, elapsed_green_s: u32) -> Self {
        let mut s = Self::new(timing, stage);
        s.elapsed_green_s = elapsed_green_s;
        s
    }

    pub fn active_stage(&self) -> usize {
        self.active_stage
    }

    pub fn elapsed_green_s(&self) -> u32 {
        self.elapsed_green_s
    }

    pub fn transition_remaining_s(&self) -> u32 {
        self.transition_remaining_s
    }

    pub fn in_transition(&self) -> bool {
        self.transition_remaining_s > 0
    }

    /// Stage the controller is committed to for the coming slot.
    pub fn target_stage(&self) -> usize {
        if self.in_transition() {
            self.next_stage
        } else {
            self.active_stage
        }
    }

    /// Whether the next decision will be honored (minimum green reached and no
    /// forced switch pending).
    pub fn accepts_request(&self) -> bool {
        !self.in_transition() && !self.must_switch() && self.elapsed_green_s >= self.timing.min_green_s
    }

    /// Green would overrun the maximum before the next decision point.
    fn must_switch(&self) -> bool {
        self.elapsed_green_s + self.timing.control_step_s > self.timing.max_green_s
    }

    pub fn apply_decision(&mut self, requested_stage: usize) -> Result<SignalEvent> {
        if requested_stage >= STAGE_COUNT {
            return Err(Error::Controller(format!("stage {requested_stage} out of range")));
        }
        if self.in_transition() {
            return Ok(SignalEvent::Transition);
        }
        let event = if self.must_switch() {
            SignalEvent::Forced
        } else if requested_stage == self.active_stage {
            SignalEvent::Continue
        } else if self.elapsed_green_s < self.timing.min_green_s {
            SignalEvent::Hold
        } else {
            SignalEvent::Switch
        };
        if matches!(event, SignalEvent::Forced | SignalEvent::Switch) {
            self.next_stage = (self.active_stage + 1) % STAGE_COUNT;
            self.transition_remaining_s = self.timing.transition_s;
            if self.transition_remaining_s == 0 {
                self.active_stage = self.next_stage;
                self.elapsed_green_s = 0;
            }
        }
        Ok(event)
    }

    /// Advances one second.
    pub fn tick(&mut self) {
        if self.transition_remaining_s > 0 {
            self.transition_remaining_s -= 1;
            if self.transition_remaining_s == 0 {
                self.active_stage = self.next_stage;
                self.elapsed_green_s = 0;
            }
        } else {
            self.elapsed_green_s += 1;
        }
    }

    /// Approach currently holding green, if any.
    pub fn green_approach(&self) -> Option<usize> {
        (!self.in_transition()).then_some(self.active_stage)
    }

    pub fn is_green(&self, approach: usize) -> bool {
        self.green_approach() == Some(approach)
    }

    pub fn one_hot_stage(&self) -> [f64; STAGE_COUNT] {
        let mut h = [0.0; STAGE_COUNT];
        h[self.active_stage] = 1.0;
        h
    }

    /// Green age normalized by the maximum green, capped at 1.
    pub fn elapsed_ratio(&self) -> f64 {
        (f64::from(self.elapsed_green_s) / f64::from(self.timing.max_green_s.max(1))).min(1.0)
    }
}

/// One JSON line of the signal log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalLogEntry {
    pub node: usize,
    pub time_s: u64,
    pub active_stage: usize,
    pub event: SignalEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start_s: u64,
    pub end_s: u64,
    /// `Some(stage)` for green, `None` for yellow/all-red.
    pub stage: Option<usize>,
}

impl Interval {
    pub fn len(&self) -> u64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collapses per-second signal states of one node into intervals.
#[derive(Debug, Clone, Default)]
pub struct IntervalRecorder {
    pub intervals: Vec<Interval>,
}

impl IntervalRecorder {
    pub fn record(&mut self, t: u64, green: Option<usize>) {
        match self.intervals.last_mut() {
            Some(last) if last.stage == green && last.end_s == t => last.end_s = t + 1,
            _ => self.intervals.push(Interval { start_s: t, end_s: t + 1, stage: green }),
        }
    }

    /// Green intervals that both started and ended inside the recording
    /// (the first and last interval can be truncated by the episode edges).
    pub fn complete_greens(&self) -> impl Iterator<Item = &Interval> {
        let n = self.intervals.len();
        self.intervals
            .iter()
            .enumerate()
            .filter(move |(i, iv)| iv.stage.is_some() && *i > 0 && *i + 1 < n)
            .map(|(_, iv)| iv)
    }
}
