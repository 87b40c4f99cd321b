//! Experiment orchestration: episodes, training and testing runs, the two
//! parameter sweeps, and the files they write.
//!
//! Layout of one run directory:
//!
//! ```text
//! agents/agent_NN.ckpt        latest network of every agent (training)
//! agents/ep_NNN/agent_NN.ckpt networks at the end of each training episode
//! train/summary.csv           per-episode aggregates
//! train/metrics_epNNN.csv     per-control-step metrics of each episode
//! train/agents_log.csv        per-agent learning statistics per episode
//! test/metrics.csv            per-control-step metrics of the test episode
//! test/signals.jsonl          every signal decision of the test episode
//! test/report_nodes.csv       per-intersection delay and queue
//! test/summary.csv            test aggregates, also per demand segment
//! test/state_actions.jsonl    optional agent states and actions
//! ```

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

pub use config::{Profile, RunConfig};

use crate::error::{Error, Result};
use crate::marl::{AgentPool, Scheme};
use crate::max_pressure::{select_stage, MovementState};
use crate::microsim::{MetricsRecord, SimConfig, Simulator, METRICS_CSV_HEADER};
use crate::rng::{labels, SeedStreams, StreamRng};
use crate::scenario::{DemandSchedule, OdTable, RoadNetwork};
use crate::signal::{SignalEvent, SignalLogEntry, STAGE_COUNT};

/// Stream index of the testing episode, far from any training episode.
pub const TEST_EPISODE: u64 = 1 << 32;

pub const REWARD_WEIGHT_CANDIDATES: [f64; 9] = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 100.0, 1000.0];
pub const MAX_GREEN_VALUES: [u32; 4] = [30, 40, 50, 60];

pub enum Controller {
    Marl(AgentPool),
    MaxPressure,
    /// Uniform stage requests through the min/max-green gate.
    Random(StreamRng),
}

impl Controller {
    /// Fresh controller for `cfg.scheme`; learning agents start untrained.
    pub fn new(cfg: &RunConfig, net: &RoadNetwork, seeds: &SeedStreams) -> Result<Self> {
        Ok(match cfg.scheme {
            Scheme::MaxPressure => Controller::MaxPressure,
            Scheme::RandomBaseline => Controller::Random(seeds.stream(labels::BASELINE, 0)),
            s => Controller::Marl(AgentPool::new(s, cfg.marl(), net, seeds)?),
        })
    }

    pub fn pool(&self) -> Option<&AgentPool> {
        match self {
            Controller::Marl(p) => Some(p),
            _ => None,
        }
    }

    pub fn pool_mut(&mut self) -> Option<&mut AgentPool> {
        match self {
            Controller::Marl(p) => Some(p),
            _ => None,
        }
    }
}

/// Means over the per-control-step stream of one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EpisodeAggregate {
    pub mean_delay_s: f64,
    pub mean_queued: f64,
    pub mean_fuel_ml_per_s: f64,
}

impl EpisodeAggregate {
    pub fn from_metrics<'a>(rows: impl IntoIterator<Item = &'a MetricsRecord>) -> Self {
        let (mut n, mut d, mut q, mut f) = (0usize, 0.0, 0.0, 0.0);
        for r in rows {
            n += 1;
            d += r.avg_delay_s_per_veh;
            q += r.queued_vehicles as f64;
            f += r.fuel_rate_ml_per_s;
        }
        if n == 0 {
            return Self::default();
        }
        let n = n as f64;
        Self { mean_delay_s: d / n, mean_queued: q / n, mean_fuel_ml_per_s: f / n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeReport {
    pub node: usize,
    /// Waiting accrued on the entrance lanes per vehicle served.
    pub avg_delay_s: f64,
    /// Mean queued vehicles on the entrance lanes over control steps.
    pub avg_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateActionRecord {
    pub time_s: u64,
    pub node: usize,
    pub state: Vec<f64>,
    pub action: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeResult {
    /// One row per control step after warm-up.
    pub metrics: Vec<MetricsRecord>,
    pub aggregate: EpisodeAggregate,
    pub nodes: Vec<NodeReport>,
    pub signal_log: Vec<SignalLogEntry>,
    pub state_actions: Vec<StateActionRecord>,
}

impl EpisodeResult {
    /// Mean network delay over rows whose time falls in `(start, end]`.
    pub fn mean_delay_between(&self, start_s: u64, end_s: u64) -> f64 {
        EpisodeAggregate::from_metrics(self.metrics.iter().filter(|r| r.time_s > start_s && r.time_s <= end_s)).mean_delay_s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    pub record_signals: bool,
    pub record_state_actions: bool,
}

/// Max Pressure request at every node, passed through the signal gate.
pub fn max_pressure_step(sim: &mut Simulator, saturation_flow: f64) -> Result<Vec<SignalEvent>> {
    (0..sim.net.node_count())
        .map(|n| {
            let current = sim.signals[n].target_stage();
            let stage = select_stage(&MovementState::from_simulator(sim, n, saturation_flow), current);
            sim.signals[n].apply_decision(stage)
        })
        .collect()
}

/// Uniform random request at every node that accepts one.
pub fn random_step(sim: &mut Simulator, rng: &mut StreamRng) -> Result<Vec<SignalEvent>> {
    sim.signals
        .iter_mut()
        .map(|s| {
            let stage = if s.accepts_request() { rng.random_range(0..STAGE_COUNT) } else { s.target_stage() };
            s.apply_decision(stage)
        })
        .collect()
}

/// Shared pieces of every run built from one config.
pub struct Setup {
    pub net: RoadNetwork,
    pub od: OdTable,
    pub training: DemandSchedule,
    pub testing: DemandSchedule,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario = cfg.scenario()?;
        let net = scenario.build_network()?;
        let od = scenario.build_od(&net)?;
        Ok(Self { training: cfg.training_schedule(&scenario), testing: cfg.testing_schedule(&scenario), net, od })
    }
}

/// Simulates one episode of `length_s` seconds. Every node runs Max Pressure
/// during warm-up; `controller` takes over afterwards.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    cfg: &RunConfig,
    setup: &Setup,
    schedule: &DemandSchedule,
    length_s: u64,
    seeds: &SeedStreams,
    episode: u64,
    controller: &mut Controller,
    opts: EpisodeOptions,
) -> Result<EpisodeResult> {
    let mut sim = Simulator::new(
        setup.net.clone(),
        setup.od.clone(),
        schedule.clone(),
        SimConfig::default(),
        cfg.timing(),
        seeds.stream(labels::DEMAND, episode),
        seeds.stream(labels::ROUTING, episode),
        seeds.stream(labels::DRIVER, episode),
    );
    let n_nodes = setup.net.node_count();
    let cs = u64::from(cfg.control_step_s);
    let mut out = EpisodeResult::default();
    let mut queue_sums = vec![0.0; n_nodes];
    let mut started = false;
    for k in 0..length_s / cs {
        let t = k * cs;
        let waits = sim.close_interval();
        let events = if t < cfg.warmup_s {
            max_pressure_step(&mut sim, cfg.saturation_flow)?
        } else {
            match controller {
                Controller::MaxPressure => max_pressure_step(&mut sim, cfg.saturation_flow)?,
                Controller::Random(rng) => random_step(&mut sim, rng)?,
                Controller::Marl(pool) => {
                    if !started {
                        pool.begin_episode(&waits);
                        started = true;
                    }
                    let o = pool.control_step(&mut sim, &waits)?;
                    if opts.record_state_actions {
                        for (node, (state, &action)) in o.states.into_iter().zip(&o.actions).enumerate() {
                            out.state_actions.push(StateActionRecord { time_s: t, node, state, action });
                        }
                    }
                    o.events
                }
            }
        };
        if opts.record_signals {
            for (node, event) in events.into_iter().enumerate() {
                out.signal_log.push(SignalLogEntry { node, time_s: t, active_stage: sim.signals[node].active_stage(), event });
            }
        }
        for _ in 0..cs {
            sim.step()?;
        }
        if t >= cfg.warmup_s {
            out.metrics.push(sim.snapshot_metrics());
            for (n, q) in queue_sums.iter_mut().enumerate() {
                *q += sim.entrance_queues(n).iter().sum::<usize>() as f64;
            }
        }
    }
    if let Some(pool) = controller.pool_mut() {
        pool.end_episode()?;
    }
    let steps = out.metrics.len().max(1) as f64;
    out.nodes = (0..n_nodes)
        .map(|n| NodeReport {
            node: n,
            avg_delay_s: sim.total_waiting_by_node()[n] / sim.served_by_node()[n].max(1) as f64,
            avg_queue: queue_sums[n] / steps,
        })
        .collect();
    out.aggregate = EpisodeAggregate::from_metrics(&out.metrics);
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(Error::Config(format!("{}: unexpected metrics header", path.display())));
    }
    lines
        .map(|l| MetricsRecord::parse_csv_row(l).ok_or_else(|| Error::Config(format!("bad metrics row {l:?}"))))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub const TRAIN_SUMMARY_HEADER: &str = "episode,mean_delay_s,mean_queued,mean_fuel_ml_per_s";
pub const AGENTS_LOG_HEADER: &str = "episode,agent,learn_steps,mean_td_error,epsilon,reward_sum";
pub const NODE_REPORT_HEADER: &str = "node,row,col,avg_delay_s,avg_queue";
pub const TEST_SUMMARY_HEADER: &str =
    "scheme,seed,mean_delay_s,mean_queued,mean_fuel_ml_per_s,segment_1_delay_s,segment_2_delay_s,segment_3_delay_s,segment_4_delay_s";

pub struct TrainingResult {
    pub episodes: Vec<EpisodeAggregate>,
    pub pool: AgentPool,
    pub run_dir: PathBuf,
}

pub fn run_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(cfg.scheme.as_str()).join(format!("seed_{seed}"))
}

/// Trains `cfg.episodes` episodes of a learning scheme under `seed`.
/// Exploration and replay memories carry over between episodes.
pub fn run_training(cfg: &RunConfig, seed: u64) -> Result<TrainingResult> {
    let setup = Setup::new(cfg)?;
    if !cfg.scheme.is_marl() {
        return Err(Error::Validation(vec!["scheme".into()]));
    }
    let seeds = SeedStreams::new(seed);
    let dir = run_dir(cfg, seed);
    let train_dir = dir.join("train");
    fs::create_dir_all(&train_dir)?;
    let mut controller = Controller::new(cfg, &setup.net, &seeds)?;
    let mut summary = BufWriter::new(File::create(train_dir.join("summary.csv"))?);
    writeln!(summary, "{TRAIN_SUMMARY_HEADER}")?;
    let mut log = BufWriter::new(File::create(train_dir.join("agents_log.csv"))?);
    writeln!(log, "{AGENTS_LOG_HEADER}")?;
    let mut episodes = Vec::new();
    for ep in 0..cfg.episodes {
        let res = run_episode(cfg, &setup, &setup.training, cfg.episode_length_s, &seeds, ep as u64, &mut controller, EpisodeOptions::default())?;
        write_metrics_csv(&train_dir.join(format!("metrics_ep{:03}.csv", ep + 1)), &res.metrics)?;
        let a = res.aggregate;
        writeln!(summary, "{},{},{},{}", ep + 1, a.mean_delay_s, a.mean_queued, a.mean_fuel_ml_per_s)?;
        let pool = controller.pool().expect("learning scheme");
        for agent in &pool.agents {
            writeln!(
                log,
                "{},{},{},{},{},{}",
                ep + 1,
                agent.node,
                agent.learner.learn_steps(),
                agent.stats.mean_td(),
                agent.learner.epsilon(),
                agent.stats.reward_sum
            )?;
        }
        pool.save_checkpoints(&dir.join("agents").join(format!("ep_{:03}", ep + 1)))?;
        pool.save_checkpoints(&dir.join("agents"))?;
        episodes.push(a);
    }
    summary.flush()?;
    log.flush()?;
    let Controller::Marl(pool) = controller else { unreachable!("checked above") };
    Ok(TrainingResult { episodes, pool, run_dir: dir })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub episode: EpisodeResult,
    /// Mean network delay per demand segment.
    pub segment_delays: Vec<f64>,
}

impl TestResult {
    pub fn summary_row(&self) -> String {
        let a = self.episode.aggregate;
        let mut row = format!("{},{},{},{},{}", self.scheme, self.seed, a.mean_delay_s, a.mean_queued, a.mean_fuel_ml_per_s);
        for d in &self.segment_delays {
            row.push_str(&format!(",{d}"));
        }
        row
    }
}

/// Greedy evaluation on the testing schedule. Learning schemes load their
/// networks from `checkpoints` (untrained networks when `None`); nothing is
/// learned. Results are written under `out` when given.
pub fn run_testing(cfg: &RunConfig, seed: u64, checkpoints: Option<&Path>, out: Option<&Path>) -> Result<TestResult> {
    let setup = Setup::new(cfg)?;
    let seeds = SeedStreams::new(seed);
    let mut controller = Controller::new(cfg, &setup.net, &seeds)?;
    if let Some(pool) = controller.pool_mut() {
        if let Some(dir) = checkpoints {
            pool.load_checkpoints(dir)?;
        }
        pool.training = false;
    }
    test_with(cfg, &setup, seed, &mut controller, out)
}

fn test_with(cfg: &RunConfig, setup: &Setup, seed: u64, controller: &mut Controller, out: Option<&Path>) -> Result<TestResult> {
    let seeds = SeedStreams::new(seed);
    let opts = EpisodeOptions { record_signals: out.is_some(), record_state_actions: out.is_some() && cfg.log_state_actions };
    let horizon = setup.testing.horizon_s();
    let episode = run_episode(cfg, setup, &setup.testing, horizon, &seeds, TEST_EPISODE, controller, opts)?;
    let segment_delays = setup.testing.boundaries().iter().map(|&(s, e)| episode.mean_delay_between(s, e)).collect();
    let result = TestResult { scheme: cfg.scheme, seed, episode, segment_delays };
    if let Some(dir) = out {
        write_test_outputs(dir, &setup.net, &result)?;
    }
    Ok(result)
}

pub fn write_test_outputs(dir: &Path, net: &RoadNetwork, res: &TestResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), &res.episode.metrics)?;
    write_jsonl(&dir.join("signals.jsonl"), &res.episode.signal_log)?;
    if !res.episode.state_actions.is_empty() {
        write_jsonl(&dir.join("state_actions.jsonl"), &res.episode.state_actions)?;
    }
    let mut w = BufWriter::new(File::create(dir.join("report_nodes.csv"))?);
    writeln!(w, "{NODE_REPORT_HEADER}")?;
    for r in &res.episode.nodes {
        let id = net.nodes[r.node];
        writeln!(w, "{},{},{},{},{}", r.node, id.row, id.col, r.avg_delay_s, r.avg_queue)?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join("summary.csv"))?);
    writeln!(w, "{}", summary_header(res.segment_delays.len()))?;
    writeln!(w, "{}", res.summary_row())?;
    w.flush()?;
    Ok(())
}

fn summary_header(segments: usize) -> String {
    if segments == 4 {
        return TEST_SUMMARY_HEADER.to_string();
    }
    let mut h = "scheme,seed,mean_delay_s,mean_queued,mean_fuel_ml_per_s".to_string();
    for i in 1..=segments {
        h.push_str(&format!(",segment_{i}_delay_s"));
    }
    h
}

/// Trains a learning scheme, then tests the trained agents.
pub fn train_and_test(cfg: &RunConfig, seed: u64) -> Result<(TrainingResult, TestResult)> {
    let trained = run_training(cfg, seed)?;
    let test = run_testing(cfg, seed, Some(&trained.run_dir.join("agents")), Some(&trained.run_dir.join("test")))?;
    Ok((trained, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSweepRow {
    pub self_weight: f64,
    pub seed: u64,
    pub test: TestResult,
    /// `n = 0`: agents ignore their own reward.
    pub neighbor_only: bool,
}

/// S2R2L trained and tested once per self-weight candidate.
pub fn sweep_reward_weight(cfg: &RunConfig, candidates: &[f64], seed: u64) -> Result<Vec<WeightSweepRow>> {
    let mut rows = Vec::new();
    for &n in candidates {
        let c = RunConfig {
            scheme: Scheme::S2r2l,
            self_weight: n,
            output_dir: cfg.output_dir.join(format!("weight_{n}")),
            ..cfg.clone()
        };
        let (_, test) = train_and_test(&c, seed)?;
        rows.push(WeightSweepRow { self_weight: n, seed, test, neighbor_only: n == 0.0 });
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("sweep_weight.csv"))?);
    writeln!(w, "self_weight,neighbor_only,seed,mean_delay_s,mean_queued,mean_fuel_ml_per_s,metrics_csv")?;
    for r in &rows {
        let a = r.test.episode.aggregate;
        let metrics = run_dir(&RunConfig { scheme: Scheme::S2r2l, output_dir: cfg.output_dir.join(format!("weight_{}", r.self_weight)), ..cfg.clone() }, seed)
            .join("test")
            .join("metrics.csv");
        writeln!(w, "{},{},{},{},{},{},{}", r.self_weight, r.neighbor_only, seed, a.mean_delay_s, a.mean_queued, a.mean_fuel_ml_per_s, metrics.display())?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxGreenRow {
    pub max_green_s: u32,
    pub scheme: Scheme,
    pub test: TestResult,
}

/// Re-tests fixed S2R2L checkpoints and Max Pressure at each maximum green.
pub fn sweep_max_green(cfg: &RunConfig, values: &[u32], seed: u64, checkpoints: &Path) -> Result<Vec<MaxGreenRow>> {
    let mut rows = Vec::new();
    for &g in values {
        for scheme in [Scheme::S2r2l, Scheme::MaxPressure] {
            let c = RunConfig { scheme, max_green_s: g, ..cfg.clone() };
            let out = cfg.output_dir.join(format!("max_green_{g}")).join(scheme.as_str()).join(format!("seed_{seed}"));
            let ck = (scheme == Scheme::S2r2l).then_some(checkpoints);
            rows.push(MaxGreenRow { max_green_s: g, scheme, test: run_testing(&c, seed, ck, Some(&out))? });
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("sweep_maxgreen.csv"))?);
    writeln!(w, "max_green_s,scheme,seed,mean_delay_s,mean_queued,mean_fuel_ml_per_s")?;
    for r in &rows {
        let a = r.test.episode.aggregate;
        writeln!(w, "{},{},{},{},{},{}", r.max_green_s, r.scheme, seed, a.mean_delay_s, a.mean_queued, a.mean_fuel_ml_per_s)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Appends test summaries of several runs into one CSV.
pub fn write_summary(path: &Path, results: &[TestResult]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", summary_header(results.first().map_or(4, |r| r.segment_delays.len())))?;
    for r in results {
        writeln!(w, "{}", r.summary_row())?;
    }
    w.flush()?;
    Ok(())
}
