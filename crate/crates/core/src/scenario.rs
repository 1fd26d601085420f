//! Navigation space, user behavior model and session lifetime model.
//!
//! A [`Scenario`] bundles a [`MediaGraph`], a one-step-memory
//! [`NavigationModel`] and a truncated-Poisson [`LifetimeModel`]. Once
//! validated it is immutable and compiled into per-pair probability rows so
//! that the evaluators can walk `(previous, current)` states without map
//! lookups.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distinguished "previous MDU" used for the first switch of a session, so
/// that `p_start` and `p_switch` share one lookup path.
pub const START: usize = usize::MAX;

/// The set of MDUs and their switch neighborhoods `N(i)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaGraph {
    pub n: usize,
    pub start: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl MediaGraph {
    /// Builds a graph, rejecting out-of-range or self neighbors.
    pub fn new(n: usize, start: usize, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let graph = MediaGraph {
            n,
            start,
            neighbors,
        };
        let violations = graph.structural_violations();
        if violations.is_empty() {
            Ok(graph)
        } else {
            Err(Error::InvalidScenario(violations))
        }
    }

    /// Largest neighborhood size, `K_max`.
    pub fn k_max(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n == 0 {
            out.push(Violation::EmptyGraph);
            return out;
        }
        if self.start >= self.n {
            out.push(Violation::StartOutOfRange { start: self.start });
        }
        if self.neighbors.len() != self.n {
            out.push(Violation::NeighborListCount {
                expected: self.n,
                found: self.neighbors.len(),
            });
        }
        for (i, list) in self.neighbors.iter().enumerate() {
            for (pos, &j) in list.iter().enumerate() {
                if j >= self.n {
                    out.push(Violation::NeighborOutOfRange { i, j });
                } else if j == i {
                    out.push(Violation::SelfNeighbor { i });
                } else if list[..pos].contains(&j) {
                    out.push(Violation::DuplicateNeighbor { i, j });
                }
            }
        }
        out
    }

    /// Neighbors of `i` that are valid indices (used while reporting on
    /// malformed graphs).
    fn valid_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors
            .get(i)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |&j| j < self.n && j != i)
    }
}

/// Start distribution `p_{s,j}` and one-step-memory switch probabilities
/// `p_{k,i,j}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NavigationModel {
    pub p_start: BTreeMap<usize, f64>,
    pub p_switch: BTreeMap<(usize, usize, usize), f64>,
}

impl NavigationModel {
    /// Probability of `prev -> cur -> next`; `prev == START` reads `p_start`.
    pub fn prob(&self, prev: usize, cur: usize, next: usize) -> Option<f64> {
        if prev == START {
            self.p_start.get(&next).copied()
        } else {
            self.p_switch.get(&(prev, cur, next)).copied()
        }
    }
}

/// Truncated Poisson lifetime with precomputed tail `g(t) = P(T >= t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeModel {
    mu: f64,
    t_max: usize,
    tail: Vec<f64>,
}

impl LifetimeModel {
    pub fn new(mu: f64, t_max: usize) -> Result<Self> {
        build_lifetime_tail(mu, t_max)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// `g(t)`; zero beyond `t_max`.
    #[inline]
    pub fn g(&self, t: usize) -> f64 {
        self.tail.get(t).copied().unwrap_or(0.0)
    }

    /// Aggregate-probability horizon `max(1, floor(mu))`.
    pub fn horizon(&self) -> usize {
        (self.mu.floor() as usize).max(1)
    }

    /// `p(T = m)` for `m <= t_max` (unnormalized truncation).
    pub fn mass(&self, m: usize) -> f64 {
        (self.g(m) - self.g(m + 1)).max(0.0)
    }
}

/// Builds `g(1..=t_max+1)` from the truncated Poisson masses.
///
/// Masses come from the log-domain recurrence `log p_m = log p_{m-1} +
/// ln(mu) - ln(m)`, so no factorial is ever formed; the tail is accumulated
/// from `t_max` downward, which keeps it non-increasing in floating point.
pub fn build_lifetime_tail(mu: f64, t_max: usize) -> Result<LifetimeModel> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if t_max == 0 {
        return Err(Error::InvalidParameter("t_max must be at least 1".into()));
    }
    let ln_mu = mu.ln();
    let mut log_p = -mu;
    let mut masses = Vec::with_capacity(t_max + 1);
    masses.push(log_p.exp());
    for m in 1..=t_max {
        log_p += ln_mu - (m as f64).ln();
        masses.push(log_p.exp());
    }
    let mut tail = vec![0.0; t_max + 2];
    let mut acc = 0.0;
    for t in (0..=t_max).rev() {
        acc += masses[t];
        tail[t] = acc.min(1.0);
    }
    Ok(LifetimeModel { mu, t_max, tail })
}

/// One problem found by [`validate_navigation_model`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    EmptyGraph,
    StartOutOfRange {
        start: usize,
    },
    NeighborListCount {
        expected: usize,
        found: usize,
    },
    NeighborOutOfRange {
        i: usize,
        j: usize,
    },
    SelfNeighbor {
        i: usize,
    },
    DuplicateNeighbor {
        i: usize,
        j: usize,
    },
    /// An entry whose indices do not describe a switch of the graph.
    EntryOutsideGraph {
        prev: Option<usize>,
        cur: usize,
        next: usize,
    },
    ProbabilityOutOfRange {
        prev: Option<usize>,
        cur: usize,
        next: usize,
        p: f64,
    },
    MissingRow {
        prev: Option<usize>,
        cur: usize,
    },
    NotNormalized {
        prev: Option<usize>,
        cur: usize,
        sum: f64,
    },
}

fn fmt_prev(prev: &Option<usize>) -> String {
    prev.map_or_else(|| "start".to_string(), |k| k.to_string())
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "graph has no MDUs"),
            Violation::StartOutOfRange { start } => write!(f, "start {start} out of range"),
            Violation::NeighborListCount { expected, found } => {
                write!(f, "expected {expected} neighbor lists, found {found}")
            }
            Violation::NeighborOutOfRange { i, j } => {
                write!(f, "neighbor {j} of MDU {i} out of range")
            }
            Violation::SelfNeighbor { i } => write!(f, "MDU {i} lists itself as a neighbor"),
            Violation::DuplicateNeighbor { i, j } => write!(f, "MDU {i} lists neighbor {j} twice"),
            Violation::EntryOutsideGraph { prev, cur, next } => {
                write!(
                    f,
                    "probability ({}, {cur}, {next}) is not a graph switch",
                    fmt_prev(prev)
                )
            }
            Violation::ProbabilityOutOfRange { prev, cur, next, p } => {
                write!(
                    f,
                    "probability ({}, {cur}, {next}) = {p} outside [0, 1]",
                    fmt_prev(prev)
                )
            }
            Violation::MissingRow { prev, cur } => {
                write!(f, "missing switch row for ({}, {cur})", fmt_prev(prev))
            }
            Violation::NotNormalized { prev, cur, sum } => {
                write!(f, "row ({}, {cur}) sums to {sum}", fmt_prev(prev))
            }
        }
    }
}

const ROW_TOLERANCE: f64 = 1e-9;

/// Lists every violated navigation-model invariant; empty iff the model is
/// usable. Rows are required only for `(prev, cur)` pairs reachable from the
/// start through positive-probability switches.
pub fn validate_navigation_model(graph: &MediaGraph, nav: &NavigationModel) -> Vec<Violation> {
    let mut out = graph.structural_violations();
    if graph.n == 0 || graph.start >= graph.n {
        return out;
    }
    let n = graph.n;
    let s = graph.start;

    for (&j, &p) in &nav.p_start {
        if !graph.valid_neighbors(s).any(|x| x == j) {
            out.push(Violation::EntryOutsideGraph {
                prev: None,
                cur: s,
                next: j,
            });
        }
        if !(0.0..=1.0).contains(&p) {
            out.push(Violation::ProbabilityOutOfRange {
                prev: None,
                cur: s,
                next: j,
                p,
            });
        }
    }
    for (&(k, i, j), &p) in &nav.p_switch {
        let ok = k < n
            && i < n
            && graph.valid_neighbors(k).any(|x| x == i)
            && graph.valid_neighbors(i).any(|x| x == j);
        if !ok {
            out.push(Violation::EntryOutsideGraph {
                prev: Some(k),
                cur: i,
                next: j,
            });
        }
        if !(0.0..=1.0).contains(&p) {
            out.push(Violation::ProbabilityOutOfRange {
                prev: Some(k),
                cur: i,
                next: j,
                p,
            });
        }
    }

    // Breadth-first walk over (prev, cur) states reachable with positive
    // probability.
    let mut seen = std::collections::HashSet::new();
    let mut queue = VecDeque::new();
    queue.push_back((START, s));
    seen.insert((START, s));
    while let Some((k, i)) = queue.pop_front() {
        let targets: Vec<usize> = graph.valid_neighbors(i).collect();
        if targets.is_empty() {
            continue;
        }
        let probs: Vec<Option<f64>> = targets.iter().map(|&j| nav.prob(k, i, j)).collect();
        let prev = (k != START).then_some(k);
        if probs.iter().all(Option::is_none) {
            out.push(Violation::MissingRow { prev, cur: i });
            continue;
        }
        let sum: f64 = probs.iter().flatten().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            out.push(Violation::NotNormalized { prev, cur: i, sum });
        }
        for (&j, p) in targets.iter().zip(&probs) {
            if p.is_some_and(|p| p > 0.0) && seen.insert((i, j)) {
                queue.push_back((i, j));
            }
        }
    }
    out
}

/// A validated navigation scenario, compiled for fast traversal.
///
/// Switch states `(prev, cur)` with `cur in N(prev)` are numbered densely:
/// the pair id of `(i, N(i)[pos])` is `offsets[i] + pos`.
#[derive(Clone, Debug)]
pub struct Scenario {
    graph: MediaGraph,
    nav: NavigationModel,
    lifetime: LifetimeModel,
    offsets: Vec<usize>,
    start_row: Vec<f64>,
    rows: Vec<Option<Vec<f64>>>,
}

impl Scenario {
    pub fn new(graph: MediaGraph, nav: NavigationModel, lifetime: LifetimeModel) -> Result<Self> {
        let violations = validate_navigation_model(&graph, &nav);
        if !violations.is_empty() {
            return Err(Error::InvalidScenario(violations));
        }
        let mut offsets = Vec::with_capacity(graph.n + 1);
        let mut acc = 0;
        for list in &graph.neighbors {
            offsets.push(acc);
            acc += list.len();
        }
        offsets.push(acc);

        let row_of = |k: usize, i: usize| -> Option<Vec<f64>> {
            let list = &graph.neighbors[i];
            if list.iter().all(|&j| nav.prob(k, i, j).is_none()) {
                return None;
            }
            Some(
                list.iter()
                    .map(|&j| nav.prob(k, i, j).unwrap_or(0.0))
                    .collect(),
            )
        };
        let start_row = row_of(START, graph.start)
            .unwrap_or_else(|| vec![0.0; graph.neighbors[graph.start].len()]);
        let mut rows = Vec::with_capacity(acc);
        for k in 0..graph.n {
            for &i in &graph.neighbors[k] {
                rows.push(row_of(k, i));
            }
        }
        Ok(Scenario {
            graph,
            nav,
            lifetime,
            offsets,
            start_row,
            rows,
        })
    }

    pub fn graph(&self) -> &MediaGraph {
        &self.graph
    }

    pub fn nav(&self) -> &NavigationModel {
        &self.nav
    }

    pub fn lifetime(&self) -> &LifetimeModel {
        &self.lifetime
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    pub fn start(&self) -> usize {
        self.graph.start
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.graph.neighbors[i]
    }

    #[inline]
    pub fn g(&self, t: usize) -> f64 {
        self.lifetime.g(t)
    }

    pub fn t_max(&self) -> usize {
        self.lifetime.t_max
    }

    /// Number of `(prev, cur)` switch states.
    pub fn pair_count(&self) -> usize {
        self.rows.len()
    }

    /// Pair id of `(i, N(i)[pos])`.
    #[inline]
    pub fn pair_id(&self, i: usize, pos: usize) -> usize {
        self.offsets[i] + pos
    }

    /// Pair id of `(i, j)` if `j in N(i)`.
    pub fn find_pair(&self, i: usize, j: usize) -> Option<usize> {
        self.neighbors(i)
            .iter()
            .position(|&x| x == j)
            .map(|pos| self.pair_id(i, pos))
    }

    /// Probabilities over `N(s)` for the first switch.
    #[inline]
    pub fn start_row(&self) -> &[f64] {
        &self.start_row
    }

    /// Probabilities over `N(cur)` given the switch state `pair = (prev, cur)`.
    #[inline]
    pub fn row(&self, pair: usize) -> Option<&[f64]> {
        self.rows[pair].as_deref()
    }

    /// Row lookup keyed by MDUs; `prev == START` yields the start row.
    pub fn row_for(&self, prev: usize, cur: usize) -> Option<&[f64]> {
        if prev == START {
            (cur == self.start()).then_some(self.start_row.as_slice())
        } else {
            self.find_pair(prev, cur).and_then(|p| self.row(p))
        }
    }

    /// MDUs that can be displayed or requested within the lifetime horizon
    /// (`t_max + 1` switches from the start), following positive-probability
    /// switches.
    pub fn horizon_mdus(&self) -> Vec<bool> {
        let mut seen = vec![false; self.n()];
        seen[self.start()] = true;
        let mut frontier = vec![self.start()];
        for _ in 0..=self.t_max() {
            let mut next = Vec::new();
            for &i in &frontier {
                for &j in self.neighbors(i) {
                    if !seen[j] {
                        seen[j] = true;
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        seen
    }
}

/// Aggregate switch-event probabilities `q(i, j)` over the expected
/// lifetime, stored densely over graph pairs.
#[derive(Clone, Debug)]
pub struct AggregateSwitchProbs {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    values: Vec<f64>,
}

impl AggregateSwitchProbs {
    /// Builds the table over the pairs of `neighbors` from explicit values.
    pub fn from_fn(neighbors: &[Vec<usize>], q: impl Fn(usize, usize) -> f64) -> Self {
        let mut offsets = Vec::with_capacity(neighbors.len() + 1);
        let mut targets = Vec::new();
        let mut values = Vec::new();
        for (i, list) in neighbors.iter().enumerate() {
            offsets.push(targets.len());
            for &j in list {
                targets.push(j);
                values.push(q(i, j));
            }
        }
        offsets.push(targets.len());
        AggregateSwitchProbs {
            offsets,
            targets,
            values,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.targets[range.clone()]
            .iter()
            .position(|&x| x == j)
            .map_or(0.0, |pos| self.values[range.start + pos])
    }

    /// `(j, q(i, j))` for every `j in N(i)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Non-zero entries as `((i, j), q)`.
    pub fn entries(&self) -> Vec<((usize, usize), f64)> {
        let n = self.offsets.len() - 1;
        (0..n)
            .flat_map(|i| self.row(i).map(move |(j, q)| ((i, j), q)))
            .filter(|(_, q)| *q != 0.0)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&q| q == 0.0)
    }
}

/// `q = sum_{t=1}^{H} g(t) v_s P^t` with `H = max(1, floor(mu))`, computed by
/// propagating a sparse distribution over `(prev, cur)` states.
pub fn aggregate_switch_probabilities(scenario: &Scenario) -> AggregateSwitchProbs {
    let n = scenario.n();
    let s = scenario.start();
    let pairs = scenario.pair_count();
    let mut state = vec![0.0; pairs];
    for (pos, &p) in scenario.start_row().iter().enumerate() {
        state[scenario.pair_id(s, pos)] += p;
    }
    // pair id -> current MDU, for propagation
    let mut cur_of = vec![0; pairs];
    for i in 0..n {
        for pos in 0..scenario.neighbors(i).len() {
            cur_of[scenario.pair_id(i, pos)] = scenario.neighbors(i)[pos];
        }
    }
    let mut q = vec![0.0; pairs];
    let mut next = vec![0.0; pairs];
    for t in 1..=scenario.lifetime().horizon() {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (pair, &mass) in state.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let Some(row) = scenario.row(pair) else {
                continue;
            };
            let cur = cur_of[pair];
            for (pos, &p) in row.iter().enumerate() {
                next[scenario.pair_id(cur, pos)] += mass * p;
            }
        }
        std::mem::swap(&mut state, &mut next);
        let g = scenario.g(t);
        for (acc, &mass) in q.iter_mut().zip(&state) {
            *acc += g * mass;
        }
    }
    AggregateSwitchProbs {
        offsets: scenario.offsets.clone(),
        targets: scenario.graph.neighbors.iter().flatten().copied().collect(),
        values: q,
    }
}

/// On-disk scenario format.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    pub start: usize,
    pub neighbors: Vec<Vec<usize>>,
    pub p_start: Vec<(usize, f64)>,
    pub p_switch: Vec<(usize, usize, usize, f64)>,
    pub lifetime: LifetimeParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeParams {
    pub mu: f64,
    pub t_max: usize,
}

impl ScenarioFile {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        ScenarioFile {
            n: scenario.n(),
            start: scenario.start(),
            neighbors: scenario.graph.neighbors.clone(),
            p_start: scenario.nav.p_start.iter().map(|(&j, &p)| (j, p)).collect(),
            p_switch: scenario
                .nav
                .p_switch
                .iter()
                .map(|(&(k, i, j), &p)| (k, i, j, p))
                .collect(),
            lifetime: LifetimeParams {
                mu: scenario.lifetime.mu,
                t_max: scenario.lifetime.t_max,
            },
        }
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let graph = MediaGraph::new(self.n, self.start, self.neighbors)?;
        let nav = NavigationModel {
            p_start: self.p_start.into_iter().collect(),
            p_switch: self
                .p_switch
                .into_iter()
                .map(|(k, i, j, p)| ((k, i, j), p))
                .collect(),
        };
        let lifetime = LifetimeModel::new(self.lifetime.mu, self.lifetime.t_max)?;
        Scenario::new(graph, nav, lifetime)
    }
}

pub fn read_scenario<R: Read>(reader: R) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_reader(reader)?;
    file.into_scenario()
}

pub fn write_scenario<W: Write>(scenario: &Scenario, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &ScenarioFile::from_scenario(scenario))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ping_pong(mu: f64, t_max: usize) -> Scenario {
        let graph = MediaGraph::new(2, 0, vec![vec![1], vec![0]]).unwrap();
        let nav = NavigationModel {
            p_start: [(1, 1.0)].into(),
            p_switch: [((0, 1, 0), 1.0), ((1, 0, 1), 1.0)].into(),
        };
        Scenario::new(graph, nav, LifetimeModel::new(mu, t_max).unwrap()).unwrap()
    }

    #[test]
    fn tail_values_match_direct_summation() {
        let lt = build_lifetime_tail(2.0, 4).unwrap();
        let direct = |t: usize| -> f64 {
            (t..=4)
                .map(|m| {
                    let fact: f64 = (1..=m).map(|x| x as f64).product();
                    2f64.powi(m as i32) * (-2f64).exp() / fact
                })
                .sum()
        };
        assert!((lt.g(1) - 0.812012).abs() < 1e-6);
        assert!((lt.g(4) - 0.090224).abs() < 1e-6);
        for t in 0..=4 {
            assert!((lt.g(t) - direct(t)).abs() < 1e-12);
        }
        assert_eq!(lt.g(5), 0.0);
        assert_eq!(lt.g(100), 0.0);
    }

    #[test]
    fn single_term_tail() {
        let lt = build_lifetime_tail(1.0, 1).unwrap();
        assert!((lt.g(1) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn tail_rejects_bad_parameters() {
        assert!(matches!(
            build_lifetime_tail(0.0, 3),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            build_lifetime_tail(-1.0, 3),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            build_lifetime_tail(1.0, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn large_mu_is_stable() {
        let lt = build_lifetime_tail(50.0, 200).unwrap();
        for t in 0..=202 {
            let g = lt.g(t);
            assert!(g.is_finite() && (0.0..=1.0).contains(&g));
            assert!(lt.g(t + 1) <= g);
        }
        assert!((lt.g(0) - 1.0).abs() < 1e-9);
        // mu large enough that a naive e^-mu * mu^m / m! would overflow m!
        let lt = build_lifetime_tail(800.0, 2000).unwrap();
        assert!((lt.g(0) - 1.0).abs() < 1e-9);
        assert!(lt.g(800) > 0.4 && lt.g(800) < 0.6);
    }

    #[test]
    fn valid_chain_has_empty_report() {
        let sc = ping_pong(2.0, 4);
        assert!(validate_navigation_model(sc.graph(), sc.nav()).is_empty());
    }

    #[test]
    fn unnormalized_row_is_reported() {
        let graph = MediaGraph {
            n: 3,
            start: 0,
            neighbors: vec![vec![1], vec![0, 2], vec![1]],
        };
        let nav = NavigationModel {
            p_start: [(1, 1.0)].into(),
            p_switch: [
                ((0, 1, 0), 0.5),
                ((0, 1, 2), 0.4),
                ((2, 1, 0), 0.5),
                ((2, 1, 2), 0.5),
                ((1, 0, 1), 1.0),
                ((1, 2, 1), 1.0),
            ]
            .into(),
        };
        let report = validate_navigation_model(&graph, &nav);
        assert_eq!(report.len(), 1, "{report:?}");
        match &report[0] {
            Violation::NotNormalized { prev, cur, sum } => {
                assert_eq!((*prev, *cur), (Some(0), 1));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_neighbor_is_reported_once() {
        let graph = MediaGraph {
            n: 2,
            start: 0,
            neighbors: vec![vec![1], vec![0, 2]],
        };
        let nav = NavigationModel {
            p_start: [(1, 1.0)].into(),
            p_switch: [((0, 1, 0), 1.0), ((1, 0, 1), 1.0)].into(),
        };
        let report = validate_navigation_model(&graph, &nav);
        assert_eq!(report, vec![Violation::NeighborOutOfRange { i: 1, j: 2 }]);
    }

    #[test]
    fn missing_reachable_row_is_reported() {
        let graph = MediaGraph {
            n: 2,
            start: 0,
            neighbors: vec![vec![1], vec![0]],
        };
        let nav = NavigationModel {
            p_start: [(1, 1.0)].into(),
            p_switch: BTreeMap::new(),
        };
        let report = validate_navigation_model(&graph, &nav);
        assert_eq!(
            report,
            vec![Violation::MissingRow {
                prev: Some(0),
                cur: 1
            }]
        );
    }

    #[test]
    fn ping_pong_mass_equals_tail_sum() {
        let sc = ping_pong(2.0, 4);
        let q = aggregate_switch_probabilities(&sc);
        let lt = sc.lifetime();
        assert!((q.total() - (lt.g(1) + lt.g(2))).abs() < 1e-12);
        assert!((q.total() - 1.353352832366127).abs() < 1e-12);
        // v_s P puts mass on (1, 0), v_s P^2 back on (0, 1)
        assert!((q.get(1, 0) - lt.g(1)).abs() < 1e-12);
        assert!((q.get(0, 1) - lt.g(2)).abs() < 1e-12);
    }

    #[test]
    fn fractional_mu_uses_single_step() {
        let sc = ping_pong(0.7, 3);
        let q = aggregate_switch_probabilities(&sc);
        assert_eq!(sc.lifetime().horizon(), 1);
        assert!((q.get(1, 0) - sc.g(1)).abs() < 1e-15);
        assert_eq!(q.get(0, 1), 0.0);
    }

    #[test]
    fn lone_mdu_has_no_switch_events() {
        let graph = MediaGraph::new(1, 0, vec![vec![]]).unwrap();
        let sc = Scenario::new(
            graph,
            NavigationModel::default(),
            LifetimeModel::new(2.0, 4).unwrap(),
        )
        .unwrap();
        let q = aggregate_switch_probabilities(&sc);
        assert!(q.entries().is_empty());
        assert_eq!(q.total(), 0.0);
    }

    #[test]
    fn scenario_file_rejects_unknown_keys() {
        let text = r#"{"n":1,"start":0,"neighbors":[[]],"p_start":[],"p_switch":[],
            "lifetime":{"mu":1.0,"t_max":1},"extra":3}"#;
        assert!(matches!(
            read_scenario(text.as_bytes()),
            Err(Error::Json(_))
        ));
    }

    #[test]
    fn scenario_file_round_trips() {
        let sc = ping_pong(2.5, 5);
        let mut buf = Vec::new();
        write_scenario(&sc, &mut buf).unwrap();
        let back = read_scenario(buf.as_slice()).unwrap();
        assert_eq!(back.graph(), sc.graph());
        assert_eq!(back.nav(), sc.nav());
        assert_eq!(back.lifetime(), sc.lifetime());
    }
}
