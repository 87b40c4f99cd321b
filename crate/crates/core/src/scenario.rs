//! One-way Manhattan grid, permitted OD table, demand schedule and routing.
//!
//! Rows are numbered 1.. from north to south and columns 1.. from west to
//! east. Horizontal roads run eastbound and vertical roads southbound. Dummy
//! origins `In0k` feed row `k` from the west and `In1k` feed column `k` from
//! the north; sinks `Out0k` drain row `k` to the east and `Out1k` drain
//! column `k` to the south. Entry and exit stubs have the same length as
//! interior links.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 40 km/h.
pub const DEFAULT_SPEED_LIMIT_MPS: f64 = 40.0 / 3.6;
pub const DEFAULT_LINK_LENGTH_M: f64 = 150.0;
pub const LANES_PER_LINK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub row: usize,
    pub col: usize,
}

impl NodeId {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

pub type LinkId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    East,
    South,
}

impl Heading {
    /// Approach index at the downstream node: 0 for eastbound, 1 for southbound.
    pub fn approach(self) -> usize {
        match self {
            Heading::East => 0,
            Heading::South => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Node(usize),
    Entry(usize),
    Exit(usize),
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: LinkId,
    pub from: Endpoint,
    pub to: Endpoint,
    pub heading: Heading,
    pub length_m: f64,
    pub lane_count: usize,
    pub speed_limit_mps: f64,
}

impl Link {
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m / self.speed_limit_mps
    }

    /// Downstream node index, if the link ends at an intersection.
    pub fn to_node(&self) -> Option<usize> {
        match self.to {
            Endpoint::Node(n) => Some(n),
            _ => None,
        }
    }
}

/// A dummy origin or sink.
#[derive(Debug, Clone)]
pub struct Terminal {
    pub label: String,
    pub link: LinkId,
}

/// An entrance lane of an intersection: `(link, lane index)`.
pub type LaneRef = (LinkId, usize);

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub rows: usize,
    pub cols: usize,
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
    pub entries: Vec<Terminal>,
    pub exits: Vec<Terminal>,
    /// Per node: `[eastbound approach, southbound approach]`.
    pub incoming: Vec<[LinkId; 2]>,
    /// Per node: `[eastbound departure, southbound departure]`.
    pub outgoing: Vec<[LinkId; 2]>,
    /// Links sorted so that every link appears before any link feeding it.
    pub downstream_first: Vec<LinkId>,
}

/// Lane a vehicle takes on a link given the heading of the link it will turn
/// onto next: eastbound continuation uses lane 1, southbound lane 0. On
/// eastbound links that is (right turn, through); on southbound links
/// (through, left turn).
pub fn lane_for_next_heading(next: Heading, lane_count: usize) -> usize {
    if lane_count < 2 {
        return 0;
    }
    match next {
        Heading::South => 0,
        Heading::East => 1,
    }
}

/// Builds a `rows x cols` grid.
pub fn build_grid(rows: usize, cols: usize, link_length_m: f64, speed_limit_mps: f64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 {
        return Err(Error::Config(format!("grid must be at least 2x2, got {rows}x{cols}")));
    }
    if !(link_length_m > 0.0) {
        return Err(Error::Config(format!("link length must be positive, got {link_length_m}")));
    }
    if !(speed_limit_mps > 0.0) {
        return Err(Error::Config(format!("speed limit must be positive, got {speed_limit_mps}")));
    }

    let nodes: Vec<NodeId> = (1..=rows).flat_map(|r| (1..=cols).map(move |c| NodeId::new(r, c))).collect();
    let idx = |r: usize, c: usize| (r - 1) * cols + (c - 1);

    let mut links = Vec::new();
    let mut push = |from: Endpoint, to: Endpoint, heading: Heading| {
        let id = links.len();
        links.push(Link {
            id,
            from,
            to,
            heading,
            length_m: link_length_m,
            lane_count: LANES_PER_LINK,
            speed_limit_mps,
        });
        id
    };

    let mut entries = Vec::new();
    let mut exits = Vec::new();
    for r in 1..=rows {
        let e = entries.len();
        let id = push(Endpoint::Entry(e), Endpoint::Node(idx(r, 1)), Heading::East);
        entries.push(Terminal { label: format!("In0{r}"), link: id });
    }
    for c in 1..=cols {
        let e = entries.len();
        let id = push(Endpoint::Entry(e), Endpoint::Node(idx(1, c)), Heading::South);
        entries.push(Terminal { label: format!("In1{c}"), link: id });
    }
    for r in 1..=rows {
        for c in 1..cols {
            push(Endpoint::Node(idx(r, c)), Endpoint::Node(idx(r, c + 1)), Heading::East);
        }
    }
    for c in 1..=cols {
        for r in 1..rows {
            push(Endpoint::Node(idx(r, c)), Endpoint::Node(idx(r + 1, c)), Heading::South);
        }
    }
    for r in 1..=rows {
        let x = exits.len();
        let id = push(Endpoint::Node(idx(r, cols)), Endpoint::Exit(x), Heading::East);
        exits.push(Terminal { label: format!("Out0{r}"), link: id });
    }
    for c in 1..=cols {
        let x = exits.len();
        let id = push(Endpoint::Node(idx(rows, c)), Endpoint::Exit(x), Heading::South);
        exits.push(Terminal { label: format!("Out1{c}"), link: id });
    }

    let mut incoming = vec![[usize::MAX; 2]; nodes.len()];
    let mut outgoing = vec![[usize::MAX; 2]; nodes.len()];
    for l in &links {
        if let Endpoint::Node(n) = l.to {
            incoming[n][l.heading.approach()] = l.id;
        }
        if let Endpoint::Node(n) = l.from {
            outgoing[n][l.heading.approach()] = l.id;
        }
    }

    // Flow only goes east or south, so sorting by the downstream position
    // (exits last in the grid order) gives a reverse topological order.
    let rank = |l: &Link| -> usize {
        match l.to {
            Endpoint::Exit(_) => usize::MAX,
            Endpoint::Node(n) => nodes[n].row + nodes[n].col,
            Endpoint::Entry(_) => unreachable!("no link ends at an entry"),
        }
    };
    let mut downstream_first: Vec<LinkId> = (0..links.len()).collect();
    downstream_first.sort_by(|&a, &b| rank(&links[b]).cmp(&rank(&links[a])).then(a.cmp(&b)));

    Ok(RoadNetwork {
        rows,
        cols,
        nodes,
        links,
        entries,
        exits,
        incoming,
        outgoing,
        downstream_first,
    })
}

impl RoadNetwork {
    /// The default 4x4 network: 150 m links, 40 km/h.
    pub fn default_grid() -> Self {
        build_grid(4, 4, DEFAULT_LINK_LENGTH_M, DEFAULT_SPEED_LIMIT_MPS).expect("valid default grid")
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        if id.row == 0 || id.col == 0 || id.row > self.rows || id.col > self.cols {
            return None;
        }
        Some((id.row - 1) * self.cols + (id.col - 1))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Neighbor node indices in the fixed order north, south, west, east;
    /// absent neighbors are skipped.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let NodeId { row, col } = self.nodes[node];
        let mut out = Vec::with_capacity(4);
        if row > 1 {
            out.push(node - self.cols);
        }
        if row < self.rows {
            out.push(node + self.cols);
        }
        if col > 1 {
            out.push(node - 1);
        }
        if col < self.cols {
            out.push(node + 1);
        }
        out
    }

    /// Entrance lanes of a node, ordered eastbound lane 0, lane 1, then
    /// southbound lane 0, lane 1.
    pub fn entrance_lanes(&self, node: usize) -> Vec<LaneRef> {
        self.incoming[node]
            .iter()
            .flat_map(|&l| (0..self.links[l].lane_count).map(move |k| (l, k)))
            .collect()
    }

    /// Links leaving the downstream end of `link`.
    pub fn successors(&self, link: LinkId) -> &[LinkId] {
        match self.links[link].to {
            Endpoint::Node(n) => &self.outgoing[n],
            _ => &[],
        }
    }

    pub fn entry_by_label(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|t| t.label == label)
    }

    pub fn exit_by_label(&self, label: &str) -> Option<usize> {
        self.exits.iter().position(|t| t.label == label)
    }

    /// Exhaustive reachability from an entry stub to every exit stub.
    pub fn reachable_exits(&self, entry: usize) -> Vec<bool> {
        let mut seen = vec![false; self.links.len()];
        let mut stack = vec![self.entries[entry].link];
        while let Some(l) = stack.pop() {
            if std::mem::replace(&mut seen[l], true) {
                continue;
            }
            stack.extend_from_slice(self.successors(l));
        }
        self.exits.iter().map(|x| seen[x.link]).collect()
    }
}

/// Index range helpers: entries `0..rows` are west-side (`In0k`), the rest
/// north-side (`In1k`); the same split holds for exits.
fn terminal_side(net: &RoadNetwork, idx: usize) -> (bool, usize) {
    if idx < net.rows {
        (true, idx + 1)
    } else {
        (false, idx - net.rows + 1)
    }
}

/// Permitted OD pairs with their per-second trip probability.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OdTable {
    /// `(entry, exit) -> permitted`.
    pub permitted: BTreeMap<(usize, usize), bool>,
    /// Optional per-pair probabilities replacing the schedule's shared value.
    #[serde(default)]
    pub overrides: BTreeMap<(usize, usize), f64>,
}

impl OdTable {
    /// The permitted-pair table for a grid: `In0k -> Out0m` iff `m >= k`,
    /// `In1k -> Out1m` iff `m >= k`, every cross pair permitted.
    pub fn for_grid(net: &RoadNetwork) -> Self {
        let mut permitted = BTreeMap::new();
        for e in 0..net.entries.len() {
            let (e_west, k) = terminal_side(net, e);
            for x in 0..net.exits.len() {
                let (x_east, m) = terminal_side(net, x);
                let ok = if e_west == x_east { m >= k } else { true };
                permitted.insert((e, x), ok);
            }
        }
        Self { permitted, overrides: BTreeMap::new() }
    }

    pub fn is_permitted(&self, entry: usize, exit: usize) -> bool {
        self.permitted.get(&(entry, exit)).copied().unwrap_or(false)
    }

    /// Permitted pairs in `(entry, exit)` order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.permitted.iter().filter(|(_, &ok)| ok).map(|(&k, _)| k)
    }

    pub fn permitted_count(&self) -> usize {
        self.pairs().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandSegment {
    pub duration_s: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandSchedule {
    pub segments: Vec<DemandSegment>,
}

impl DemandSchedule {
    pub fn new(segments: Vec<DemandSegment>) -> Self {
        Self { segments }
    }

    /// Equal-length segments with the given probabilities.
    pub fn uniform_segments(probabilities: &[f64], duration_s: u64) -> Self {
        Self::new(
            probabilities
                .iter()
                .map(|&probability| DemandSegment { duration_s, probability })
                .collect(),
        )
    }

    /// Default training schedule: 0.10, 0.05, 0.20, 0.15 over 5000 s each.
    pub fn training_default() -> Self {
        Self::uniform_segments(&[0.10, 0.05, 0.20, 0.15], 5000)
    }

    /// Default testing schedule (medium, low, high, medium): 0.15, 0.03, 0.25, 0.18.
    pub fn testing_default() -> Self {
        Self::uniform_segments(&[0.15, 0.03, 0.25, 0.18], 5000)
    }

    /// Same probabilities, every segment shortened by `factor`.
    pub fn compressed(&self, factor: u64) -> Self {
        Self::new(
            self.segments
                .iter()
                .map(|s| DemandSegment { duration_s: s.duration_s / factor.max(1), probability: s.probability })
                .collect(),
        )
    }

    /// Same segment proportions, rescaled to `total_s`.
    pub fn fit_to(&self, total_s: u64) -> Self {
        let horizon = self.horizon_s().max(1);
        let mut out: Vec<DemandSegment> = self
            .segments
            .iter()
            .map(|s| DemandSegment { duration_s: s.duration_s * total_s / horizon, probability: s.probability })
            .collect();
        let assigned: u64 = out.iter().map(|s| s.duration_s).sum();
        if let Some(last) = out.last_mut() {
            last.duration_s += total_s - assigned;
        }
        Self::new(out)
    }

    pub fn horizon_s(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Probability active at `t`; zero past the horizon.
    pub fn probability_at(&self, t: u64) -> f64 {
        self.segment_at(t).map_or(0.0, |i| self.segments[i].probability)
    }

    pub fn segment_at(&self, t: u64) -> Option<usize> {
        let mut end = 0;
        for (i, s) in self.segments.iter().enumerate() {
            end += s.duration_s;
            if t < end {
                return Some(i);
            }
        }
        None
    }

    /// `[start, end)` of every segment.
    pub fn boundaries(&self) -> Vec<(u64, u64)> {
        let mut t = 0;
        self.segments
            .iter()
            .map(|s| {
                let b = (t, t + s.duration_s);
                t += s.duration_s;
                b
            })
            .collect()
    }

    pub fn validate(&self, episode_length_s: u64) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("demand schedule has no segments".into()));
        }
        for s in &self.segments {
            if s.duration_s == 0 {
                return Err(Error::Config("demand segment duration must be positive".into()));
            }
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::Config(format!("demand probability {} outside [0,1]", s.probability)));
            }
        }
        if self.horizon_s() != episode_length_s {
            return Err(Error::Config(format!(
                "schedule covers {} s but the episode lasts {} s",
                self.horizon_s(),
                episode_length_s
            )));
        }
        Ok(())
    }
}

/// A trip request released by the demand generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trip {
    pub entry: usize,
    pub exit: usize,
    pub created_s: u64,
}

/// One Bernoulli draw per permitted pair for second `sim_time_s`.
pub fn spawn_trips<R: Rng + ?Sized>(od: &OdTable, schedule: &DemandSchedule, sim_time_s: u64, rng: &mut R) -> Vec<Trip> {
    let p = schedule.probability_at(sim_time_s);
    let mut out = Vec::new();
    for (entry, exit) in od.pairs() {
        let p = od.overrides.get(&(entry, exit)).copied().unwrap_or(p);
        if rng.random::<f64>() < p {
            out.push(Trip { entry, exit, created_s: sim_time_s });
        }
    }
    out
}

/// Ordered link sequence from the entry stub to the exit stub.
pub type Route = Vec<LinkId>;

const COST_TIE_TOL: f64 = 1e-9;

/// Minimum-cost route for `trip` under `cost`. Ties are broken uniformly over
/// all optimal paths.
pub fn route_trip<R: Rng + ?Sized>(
    net: &RoadNetwork,
    od: &OdTable,
    trip: &Trip,
    cost: &dyn Fn(LinkId) -> f64,
    rng: &mut R,
) -> Result<Route> {
    if !od.is_permitted(trip.entry, trip.exit) {
        return Err(Error::Routing(format!(
            "pair {} -> {} is not permitted",
            net.entries[trip.entry].label, net.exits[trip.exit].label
        )));
    }
    let target = net.exits[trip.exit].link;
    let n = net.links.len();
    let mut to_go = vec![f64::INFINITY; n];
    let mut paths = vec![0.0f64; n];
    for &l in &net.downstream_first {
        if l == target {
            to_go[l] = cost(l);
            paths[l] = 1.0;
            continue;
        }
        let succ = net.successors(l);
        let best = succ.iter().map(|&s| to_go[s]).fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            to_go[l] = cost(l) + best;
            paths[l] = succ
                .iter()
                .filter(|&&s| to_go[s] <= best + COST_TIE_TOL)
                .map(|&s| paths[s])
                .sum();
        }
    }

    let start = net.entries[trip.entry].link;
    if !to_go[start].is_finite() {
        return Err(Error::Routing(format!(
            "{} unreachable from {}",
            net.exits[trip.exit].label, net.entries[trip.entry].label
        )));
    }
    let mut route = vec![start];
    let mut cur = start;
    while cur != target {
        let succ = net.successors(cur);
        let best = succ.iter().map(|&s| to_go[s]).fold(f64::INFINITY, f64::min);
        let optimal: Vec<LinkId> = succ.iter().copied().filter(|&s| to_go[s] <= best + COST_TIE_TOL).collect();
        let next = if optimal.len() == 1 {
            optimal[0]
        } else {
            let total: f64 = optimal.iter().map(|&s| paths[s]).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = optimal[optimal.len() - 1];
            for &s in &optimal {
                if u < paths[s] {
                    pick = s;
                    break;
                }
                u -= paths[s];
            }
            pick
        };
        route.push(next);
        cur = next;
    }
    Ok(route)
}

/// Scenario document: grid geometry, demand schedules and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub cols: usize,
    pub link_length_m: f64,
    pub speed_limit_mps: f64,
    pub seed: u64,
    pub training_schedule: DemandSchedule,
    pub testing_schedule: DemandSchedule,
    /// Per-pair probability overrides, keyed by labels `"In01->Out03"`.
    #[serde(default)]
    pub pair_overrides: BTreeMap<String, f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            link_length_m: DEFAULT_LINK_LENGTH_M,
            speed_limit_mps: DEFAULT_SPEED_LIMIT_MPS,
            seed: 0,
            training_schedule: DemandSchedule::training_default(),
            testing_schedule: DemandSchedule::testing_default(),
            pair_overrides: BTreeMap::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn build_network(&self) -> Result<RoadNetwork> {
        build_grid(self.rows, self.cols, self.link_length_m, self.speed_limit_mps)
    }

    pub fn build_od(&self, net: &RoadNetwork) -> Result<OdTable> {
        let mut od = OdTable::for_grid(net);
        for (key, &p) in &self.pair_overrides {
            let (e, x) = key
                .split_once("->")
                .ok_or_else(|| Error::Config(format!("bad pair override key {key:?}")))?;
            let e = net
                .entry_by_label(e.trim())
                .ok_or_else(|| Error::Config(format!("unknown entry in {key:?}")))?;
            let x = net
                .exit_by_label(x.trim())
                .ok_or_else(|| Error::Config(format!("unknown exit in {key:?}")))?;
            if !od.is_permitted(e, x) {
                return Err(Error::Config(format!("override for non-permitted pair {key:?}")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("override probability {p} outside [0,1]")));
            }
            od.overrides.insert((e, x), p);
        }
        Ok(od)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn free_flow(net: &RoadNetwork) -> impl Fn(LinkId) -> f64 + '_ {
        move |l| net.links[l].free_flow_time_s()
    }

    /// Every entry-to-exit path by depth-first enumeration.
    fn all_paths(net: &RoadNetwork, entry: usize, exit: usize) -> Vec<Route> {
        fn go(net: &RoadNetwork, cur: LinkId, target: LinkId, path: &mut Route, out: &mut Vec<Route>) {
            path.push(cur);
            if cur == target {
                out.push(path.clone());
            } else {
                for &s in net.successors(cur) {
                    go(net, s, target, path, out);
                }
            }
            path.pop();
        }
        let mut out = Vec::new();
        go(net, net.entries[entry].link, net.exits[exit].link, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn default_grid_shape() {
        let net = RoadNetwork::default_grid();
        assert_eq!(net.node_count(), 16);
        assert_eq!(net.entries.len(), 8);
        assert_eq!(net.exits.len(), 8);
        for n in 0..16 {
            let ins = net.links.iter().filter(|l| l.to == Endpoint::Node(n)).count();
            let outs = net.links.iter().filter(|l| l.from == Endpoint::Node(n)).count();
            assert_eq!((ins, outs), (2, 2));
        }
        for l in &net.links {
            assert_eq!(l.length_m, 150.0);
            assert_eq!(l.lane_count, 2);
            assert!((l.speed_limit_mps - 11.111).abs() < 1e-3);
        }
        let labels: Vec<_> = net.entries.iter().map(|t| t.label.as_str()).collect();
        assert_eq!(labels, ["In01", "In02", "In03", "In04", "In11", "In12", "In13", "In14"]);
    }

    #[test]
    fn neighbor_relation() {
        let net = RoadNetwork::default_grid();
        let n22 = net.node_index(NodeId::new(2, 2)).unwrap();
        let mut j: Vec<NodeId> = net.neighbors(n22).into_iter().map(|k| net.nodes[k]).collect();
        // brute-force adjacency: Manhattan distance 1
        let mut expected: Vec<NodeId> = net
            .nodes
            .iter()
            .copied()
            .filter(|m| m.row.abs_diff(2) + m.col.abs_diff(2) == 1)
            .collect();
        j.sort();
        expected.sort();
        assert_eq!(j, expected);
        assert_eq!(j, vec![NodeId::new(1, 2), NodeId::new(2, 1), NodeId::new(2, 3), NodeId::new(3, 2)]);

        for i in 0..16 {
            for &k in &net.neighbors(i) {
                assert!(net.neighbors(k).contains(&i));
            }
            let NodeId { row, col } = net.nodes[i];
            let boundary = [row == 1, row == 4, col == 1, col == 4].iter().filter(|&&b| b).count();
            assert_eq!(net.neighbors(i).len(), 4 - boundary);
        }
    }

    #[test]
    fn smallest_grid_all_corners() {
        let net = build_grid(2, 2, 150.0, 11.111).unwrap();
        assert_eq!(net.node_count(), 4);
        assert!((0..4).all(|n| net.neighbors(n).len() == 2));
    }

    #[test]
    fn bad_dimensions_rejected() {
        assert!(matches!(build_grid(1, 4, 150.0, 11.1), Err(Error::Config(_))));
        assert!(matches!(build_grid(4, 4, 0.0, 11.1), Err(Error::Config(_))));
    }

    #[test]
    fn permitted_pairs_match_reachability() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        assert_eq!(od.permitted_count(), 52);
        let mut reachable = 0;
        for e in 0..8 {
            for (x, &r) in net.reachable_exits(e).iter().enumerate() {
                assert_eq!(r, od.is_permitted(e, x), "{} -> {}", net.entries[e].label, net.exits[x].label);
                reachable += r as usize;
            }
        }
        assert_eq!(reachable, 52);
        let in02 = net.entry_by_label("In02").unwrap();
        let out01 = net.exit_by_label("Out01").unwrap();
        assert!(!od.is_permitted(in02, out01));
    }

    #[test]
    fn spawn_extremes() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = DemandSchedule::uniform_segments(&[0.0], 100);
        let one = DemandSchedule::uniform_segments(&[1.0], 100);
        for t in 0..100 {
            assert!(spawn_trips(&od, &zero, t, &mut rng).is_empty());
            assert_eq!(spawn_trips(&od, &one, t, &mut rng).len(), 52);
        }
    }

    #[test]
    fn spawn_count_is_binomial() {
        let net = RoadNetwork::default_grid();
        let mut od = OdTable::for_grid(&net);
        let keep = od.pairs().next().unwrap();
        for (k, v) in od.permitted.iter_mut() {
            *v = *k == keep;
        }
        let sched = DemandSchedule::uniform_segments(&[0.03], 5000);
        let sigma = (5000.0f64 * 0.03 * 0.97).sqrt();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: usize = (0..5000).map(|t| spawn_trips(&od, &sched, t, &mut rng).len()).sum();
            assert!((n as f64 - 150.0).abs() <= 3.0 * sigma, "seed {seed}: {n}");
        }
    }

    #[test]
    fn spawn_is_reproducible() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        let s = DemandSchedule::testing_default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..2000).flat_map(|t| spawn_trips(&od, &s, t, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn straight_routes_under_free_flow() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (e, x, heading) in [("In01", "Out01", Heading::East), ("In11", "Out11", Heading::South)] {
            let trip = Trip { entry: net.entry_by_label(e).unwrap(), exit: net.exit_by_label(x).unwrap(), created_s: 0 };
            let route = route_trip(&net, &od, &trip, &free_flow(&net), &mut rng).unwrap();
            let paths = all_paths(&net, trip.entry, trip.exit);
            assert_eq!(paths.len(), 1);
            assert_eq!(route, paths[0]);
            assert_eq!(route.len(), 5);
            assert!(route.iter().all(|&l| net.links[l].heading == heading));
        }
    }

    #[test]
    fn non_permitted_pair_rejected() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        let trip = Trip { entry: net.entry_by_label("In02").unwrap(), exit: net.exit_by_label("Out01").unwrap(), created_s: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(route_trip(&net, &od, &trip, &free_flow(&net), &mut rng), Err(Error::Routing(_))));
    }

    #[test]
    fn routes_are_minimal_and_uniform_over_ties() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trip = Trip { entry: net.entry_by_label("In01").unwrap(), exit: net.exit_by_label("Out14").unwrap(), created_s: 0 };
        let paths = all_paths(&net, trip.entry, trip.exit);
        // monotone lattice paths from (1,1) to (4,4)
        assert_eq!(paths.len(), 20);
        let mut counts = std::collections::HashMap::new();
        let draws = 8000;
        for _ in 0..draws {
            let r = route_trip(&net, &od, &trip, &free_flow(&net), &mut rng).unwrap();
            assert!(paths.contains(&r));
            *counts.entry(r).or_insert(0usize) += 1;
        }
        // all paths have equal free-flow length, so every one should be drawn ~uniformly
        assert_eq!(counts.len(), paths.len());
        let expect = draws as f64 / paths.len() as f64;
        for &c in counts.values() {
            assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt(), "{c} vs {expect}");
        }
    }

    #[test]
    fn congested_link_is_avoided() {
        let net = RoadNetwork::default_grid();
        let od = OdTable::for_grid(&net);
        let trip = Trip { entry: net.entry_by_label("In01").unwrap(), exit: net.exit_by_label("Out12").unwrap(), created_s: 0 };
        let jammed = net.outgoing[0][0];
        let cost = |l: LinkId| net.links[l].free_flow_time_s() + if l == jammed { 40.0 } else { 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let paths = all_paths(&net, trip.entry, trip.exit);
        let best = paths
            .iter()
            .map(|p| p.iter().map(|&l| cost(l)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        for _ in 0..50 {
            let r = route_trip(&net, &od, &trip, &cost, &mut rng).unwrap();
            assert!(!r.contains(&jammed));
            let c: f64 = r.iter().map(|&l| cost(l)).sum();
            assert!((c - best).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule_helpers() {
        let s = DemandSchedule::testing_default();
        assert_eq!(s.horizon_s(), 20000);
        assert!(s.validate(20000).is_ok());
        assert!(s.validate(4000).is_err());
        let c = s.compressed(5);
        assert_eq!(c.boundaries(), vec![(0, 1000), (1000, 2000), (2000, 3000), (3000, 4000)]);
        assert_eq!(c.probability_at(2500), 0.25);
        assert_eq!(c.probability_at(4000), 0.0);
        assert_eq!(s.fit_to(4000), c);
        assert!(DemandSchedule::uniform_segments(&[1.5], 10).validate(10).is_err());
    }

    #[test]
    fn scenario_toml_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.pair_overrides.insert("In01->Out03".into(), 0.2);
        let text = cfg.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        let net = back.build_network().unwrap();
        let od = back.build_od(&net).unwrap();
        assert_eq!(od.overrides.len(), 1);
        let mut bad = cfg.clone();
        bad.pair_overrides.insert("In02->Out01".into(), 0.2);
        assert!(bad.build_od(&net).is_err());
    }
}
