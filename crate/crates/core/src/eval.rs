//! Expected transmission cost of a structure under the one-MDU buffer
//! models, by memoized recursion over `(level, previous, current, buffer)`.
//!
//! Level `t` holds the user at `cur` (arrived from `prev`) and prices the
//! next switch. Each level's continuation is weighted by `g(t + 1)`, so the
//! recursion stops once that weight is zero. The first switch is weighted by
//! one unless `weight_first_switch` is set, in which case it gets `g(1)`.

use std::collections::BTreeMap;
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cost::{CompiledStructure, SizeTable, Structure};
use crate::error::Result;
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferModel {
    Fixed,
    #[serde(alias = "flex")]
    Flexible,
}

impl fmt::Display for BufferModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BufferModel::Fixed => "fixed",
            BufferModel::Flexible => "flexible",
        })
    }
}

/// How the server answers one switch request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Independent reconstruction; under the flexible model `keep` is the
    /// MDU left in the reference buffer (`None` keeps it empty).
    ZeroHop {
        keep: Option<usize>,
    },
    OneHop {
        predictor: usize,
    },
    TwoHop {
        intermediate: usize,
        predictor: usize,
    },
}

/// A decision point: the user at `cur` (coming from `prev`, `None` at the
/// session start) with `buffer` in the reference buffer asks for `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolicyKey {
    pub t: usize,
    pub prev: Option<usize>,
    pub cur: usize,
    pub buffer: Option<usize>,
    pub target: usize,
}

impl fmt::Display for PolicyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |x: Option<usize>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        write!(
            f,
            "(t={}, prev={}, cur={}, buffer={}, target={})",
            self.t,
            opt(self.prev),
            self.cur,
            opt(self.buffer),
            self.target
        )
    }
}

/// Deterministic server decision table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyFile", try_from = "PolicyFile")]
pub struct Policy {
    pub buffer: BufferModel,
    pub weight_first_switch: bool,
    pub actions: BTreeMap<PolicyKey, Action>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    buffer: BufferModel,
    weight_first_switch: bool,
    entries: Vec<PolicyEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyEntry {
    #[serde(flatten)]
    key: PolicyKey,
    action: Action,
}

impl From<Policy> for PolicyFile {
    fn from(p: Policy) -> Self {
        PolicyFile {
            buffer: p.buffer,
            weight_first_switch: p.weight_first_switch,
            entries: p
                .actions
                .into_iter()
                .map(|(key, action)| PolicyEntry { key, action })
                .collect(),
        }
    }
}

impl TryFrom<PolicyFile> for Policy {
    type Error = String;

    fn try_from(f: PolicyFile) -> std::result::Result<Self, String> {
        let mut actions = BTreeMap::new();
        for e in f.entries {
            if actions.insert(e.key, e.action).is_some() {
                return Err(format!("duplicate policy entry {}", e.key));
            }
        }
        Ok(Policy {
            buffer: f.buffer,
            weight_first_switch: f.weight_first_switch,
            actions,
        })
    }
}

impl Policy {
    pub fn get(&self, key: &PolicyKey) -> Option<Action> {
        self.actions.get(key).copied()
    }

    pub fn read_json<R: std::io::Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write_json<W: std::io::Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpStats {
    /// Memoized states (the root is not memoized).
    pub states: usize,
    /// Request decisions evaluated across all states.
    pub entries: usize,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub expected_cost: f64,
    pub policy: Policy,
    pub stats: DpStats,
}

/// The decision table of an evaluation.
pub fn extract_policy(result: &EvalResult) -> &Policy {
    &result.policy
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub weight_first_switch: bool,
    pub record_policy: bool,
}

/// Lower-bound substitution used by branch-and-bound search: the request
/// bracket of each listed transition `(from, to)` is replaced by a value
/// that never exceeds it.
#[derive(Clone, Debug)]
pub struct Substitution {
    transitions: Vec<(usize, usize)>,
    n: usize,
    /// `bound[t * n + x]`: lower bound on any request bracket for target
    /// `x` at level `t`.
    bound: Vec<f64>,
}

impl Substitution {
    /// `floor` must not exceed any immediate cost of a request under the
    /// structure being bounded.
    pub fn new(scenario: &Scenario, transitions: Vec<(usize, usize)>, floor: f64) -> Self {
        let n = scenario.n();
        let levels = scenario.t_max() + 2;
        let mut bound = vec![0.0; levels * n];
        for t in (0..levels).rev() {
            let g = scenario.g(t + 1);
            for x in 0..n {
                let future = if g > 0.0 && t + 1 < levels {
                    scenario
                        .neighbors(x)
                        .iter()
                        .map(|&y| bound[(t + 1) * n + y])
                        .fold(f64::INFINITY, f64::min)
                } else {
                    f64::INFINITY
                };
                let future = if future.is_finite() { g * future } else { 0.0 };
                bound[t * n + x] = floor + future;
            }
        }
        Substitution {
            transitions,
            n,
            bound,
        }
    }

    #[inline]
    fn lookup(&self, t: usize, from: usize, to: usize) -> Option<f64> {
        self.transitions
            .contains(&(from, to))
            .then(|| self.bound[t * self.n + to])
    }
}

const NO_BUFFER: usize = (1 << 24) - 1;

#[inline]
fn pack(t: usize, pair: usize, buffer: usize) -> u64 {
    debug_assert!(pair < 1 << 24 && buffer <= NO_BUFFER && t < 1 << 16);
    ((t as u64) << 48) | ((pair as u64) << 24) | buffer as u64
}

struct Dp<'s, 'c> {
    scenario: &'s Scenario,
    cs: &'c CompiledStructure<'c>,
    memo: FxHashMap<u64, f64>,
    policy: Option<BTreeMap<PolicyKey, Action>>,
    subst: Option<&'s Substitution>,
    triggered: bool,
    entries: usize,
}

impl Dp<'_, '_> {
    fn record(&mut self, key: PolicyKey, action: Action) {
        if let Some(p) = self.policy.as_mut() {
            p.insert(key, action);
        }
    }

    fn substituted(&mut self, t: usize, from: usize, to: usize) -> Option<f64> {
        let v = self.subst.and_then(|s| s.lookup(t, from, to));
        self.triggered |= v.is_some();
        v
    }

    /// Expected future cost at level `t` of the fixed model, user at `cur`
    /// reached through `pair`.
    fn fixed(&mut self, t: usize, prev: Option<usize>, cur: usize, pair: Option<usize>) -> f64 {
        let key = pair.map(|p| pack(t, p, 0));
        if let Some(v) = key.and_then(|k| self.memo.get(&k)) {
            return *v;
        }
        let row = match pair {
            Some(p) => self.scenario.row(p),
            None => Some(self.scenario.start_row()),
        };
        let mut total = 0.0;
        if let Some(row) = row {
            let g = self.scenario.g(t + 1);
            for (pos, &target) in self.scenario.neighbors(cur).iter().enumerate() {
                let p = row[pos];
                if p == 0.0 {
                    continue;
                }
                self.entries += 1;
                let bracket = if let Some(v) = self.substituted(t, cur, target) {
                    v
                } else {
                    let next = if g > 0.0 {
                        g * self.fixed(
                            t + 1,
                            Some(cur),
                            target,
                            Some(self.scenario.pair_id(cur, pos)),
                        )
                    } else {
                        0.0
                    };
                    let one = self.cs.one_hop(cur, target);
                    let zero = self.cs.zero_hop(target);
                    let (immediate, action) = if one <= zero {
                        (one, Action::OneHop { predictor: cur })
                    } else {
                        (zero, Action::ZeroHop { keep: None })
                    };
                    self.record(
                        PolicyKey {
                            t,
                            prev,
                            cur,
                            buffer: None,
                            target,
                        },
                        action,
                    );
                    immediate + next
                };
                total += p * bracket;
            }
        }
        if let Some(k) = key {
            self.memo.insert(k, total);
        }
        total
    }

    /// Flexible model; `buffer == None` only at the session start.
    fn flexible(
        &mut self,
        t: usize,
        prev: Option<usize>,
        cur: usize,
        buffer: Option<usize>,
        pair: Option<usize>,
    ) -> f64 {
        let key = pair.map(|p| pack(t, p, buffer.unwrap_or(NO_BUFFER)));
        if let Some(v) = key.and_then(|k| self.memo.get(&k)) {
            return *v;
        }
        let row = match pair {
            Some(p) => self.scenario.row(p),
            None => Some(self.scenario.start_row()),
        };
        let mut total = 0.0;
        if let Some(row) = row {
            let g = self.scenario.g(t + 1);
            let refs = reference_set(buffer, cur);
            let refs = &refs[..];
            for (pos, &target) in self.scenario.neighbors(cur).iter().enumerate() {
                let p = row[pos];
                if p == 0.0 {
                    continue;
                }
                self.entries += 1;
                let bracket = if let Some(v) = self.substituted(t, cur, target) {
                    v
                } else {
                    let next_pair = self.scenario.pair_id(cur, pos);
                    let mut best = f64::INFINITY;
                    let mut best_action = Action::ZeroHop { keep: Some(cur) };
                    let mut consider =
                        |dp: &mut Self, immediate: f64, keep: usize, action: Action| {
                            if immediate >= best {
                                return;
                            }
                            let cost = if g > 0.0 {
                                immediate
                                    + g * dp.flexible(
                                        t + 1,
                                        Some(cur),
                                        target,
                                        Some(keep),
                                        Some(next_pair),
                                    )
                            } else {
                                immediate
                            };
                            if cost < best {
                                best = cost;
                                best_action = action;
                            }
                        };
                    for &r in refs {
                        let one = self.cs.one_hop(r, target);
                        if one.is_finite() {
                            consider(self, one, r, Action::OneHop { predictor: r });
                        }
                    }
                    for &mid in self.cs.predictors_of(target) {
                        let (first, via) = cheapest_from(self.cs, refs, mid);
                        if first.is_finite() {
                            let immediate = first + self.cs.one_hop(mid, target);
                            consider(
                                self,
                                immediate,
                                mid,
                                Action::TwoHop {
                                    intermediate: mid,
                                    predictor: via,
                                },
                            );
                        }
                    }
                    let zero = self.cs.zero_hop(target);
                    for &r in refs {
                        consider(self, zero, r, Action::ZeroHop { keep: Some(r) });
                    }
                    self.record(
                        PolicyKey {
                            t,
                            prev,
                            cur,
                            buffer,
                            target,
                        },
                        best_action,
                    );
                    best
                };
                total += p * bracket;
            }
        }
        if let Some(k) = key {
            self.memo.insert(k, total);
        }
        total
    }
}

/// Decoded MDUs usable as references: the buffer and the displayed MDU,
/// ascending and deduplicated.
#[inline]
fn reference_set(buffer: Option<usize>, cur: usize) -> smallset::Refs {
    smallset::Refs::new(buffer, cur)
}

mod smallset {
    use std::ops::Deref;

    pub struct Refs {
        items: [usize; 2],
        len: usize,
    }

    impl Refs {
        pub fn new(buffer: Option<usize>, cur: usize) -> Self {
            match buffer {
                Some(b) if b < cur => Refs {
                    items: [b, cur],
                    len: 2,
                },
                Some(b) if b > cur => Refs {
                    items: [cur, b],
                    len: 2,
                },
                _ => Refs {
                    items: [cur, 0],
                    len: 1,
                },
            }
        }
    }

    impl Deref for Refs {
        type Target = [usize];
        fn deref(&self) -> &[usize] {
            &self.items[..self.len]
        }
    }
}

/// Cheapest one-hop into `mid` from any of `refs`; ties go to the first.
#[inline]
fn cheapest_from(cs: &CompiledStructure<'_>, refs: &[usize], mid: usize) -> (f64, usize) {
    let mut best = (f64::INFINITY, refs[0]);
    for &r in refs {
        let c = cs.one_hop(r, mid);
        if c < best.0 {
            best = (c, r);
        }
    }
    best
}

/// Memoized evaluator over a compiled structure.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator {
    pub buffer: BufferModel,
    pub options: EvalOptions,
}

impl Evaluator {
    pub fn new(buffer: BufferModel) -> Self {
        Evaluator {
            buffer,
            options: EvalOptions::default(),
        }
    }

    pub fn weight_first_switch(mut self, on: bool) -> Self {
        self.options.weight_first_switch = on;
        self
    }

    pub fn record_policy(mut self, on: bool) -> Self {
        self.options.record_policy = on;
        self
    }

    /// Full evaluation.
    pub fn run(&self, scenario: &Scenario, cs: &CompiledStructure<'_>) -> EvalResult {
        self.run_with(scenario, cs, None).0
    }

    /// Expected cost only.
    pub fn cost(&self, scenario: &Scenario, cs: &CompiledStructure<'_>) -> f64 {
        let mut e = *self;
        e.options.record_policy = false;
        e.run(scenario, cs).expected_cost
    }

    /// Evaluation with a lower-bound substitution; the flag reports whether
    /// any substituted transition was reached.
    pub fn run_substituted(
        &self,
        scenario: &Scenario,
        cs: &CompiledStructure<'_>,
        subst: &Substitution,
    ) -> (f64, bool) {
        let mut e = *self;
        e.options.record_policy = false;
        let (r, hit) = e.run_with(scenario, cs, Some(subst));
        (r.expected_cost, hit)
    }

    fn run_with(
        &self,
        scenario: &Scenario,
        cs: &CompiledStructure<'_>,
        subst: Option<&Substitution>,
    ) -> (EvalResult, bool) {
        assert_eq!(scenario.n(), cs.n(), "structure and scenario sizes differ");
        let mut dp = Dp {
            scenario,
            cs,
            memo: FxHashMap::default(),
            policy: self.options.record_policy.then(BTreeMap::new),
            subst,
            triggered: false,
            entries: 0,
        };
        let s = scenario.start();
        let switches = match self.buffer {
            BufferModel::Fixed => dp.fixed(0, None, s, None),
            BufferModel::Flexible => dp.flexible(0, None, s, None, None),
        };
        let first_weight = if self.options.weight_first_switch {
            scenario.g(1)
        } else {
            1.0
        };
        let expected_cost = cs.zero_hop(s) + first_weight * switches;
        let result = EvalResult {
            expected_cost,
            policy: Policy {
                buffer: self.buffer,
                weight_first_switch: self.options.weight_first_switch,
                actions: dp.policy.unwrap_or_default(),
            },
            stats: DpStats {
                states: dp.memo.len(),
                entries: dp.entries,
            },
        };
        (result, dp.triggered)
    }
}

fn evaluate(
    scenario: &Scenario,
    sizes: &SizeTable,
    structure: &Structure,
    buffer: BufferModel,
) -> Result<EvalResult> {
    let cs = CompiledStructure::new(structure, sizes)?;
    Ok(Evaluator::new(buffer)
        .record_policy(true)
        .run(scenario, &cs))
}

/// Expected cost under the fixed one-MDU buffer.
pub fn eval_fixed(
    scenario: &Scenario,
    sizes: &SizeTable,
    structure: &Structure,
) -> Result<EvalResult> {
    evaluate(scenario, sizes, structure, BufferModel::Fixed)
}

/// Expected cost under the flexible one-MDU reference buffer.
pub fn eval_flexible(
    scenario: &Scenario,
    sizes: &SizeTable,
    structure: &Structure,
) -> Result<EvalResult> {
    evaluate(scenario, sizes, structure, BufferModel::Flexible)
}

/// Expected cost when every MDU decoded during the session stays available:
/// revisits are free and any decoded MDU may serve as a predictor.
pub fn eval_infinite(
    scenario: &Scenario,
    cs: &CompiledStructure<'_>,
    weight_first_switch: bool,
) -> f64 {
    let words = scenario.n().div_ceil(64);
    let s = scenario.start();
    let first_weight = if weight_first_switch {
        scenario.g(1)
    } else {
        1.0
    };
    let mut dp = InfiniteDp {
        scenario,
        cs,
        memo: FxHashMap::default(),
    };
    let mut best = f64::INFINITY;
    for (immediate, via) in dp.intra_routes(s) {
        let mut decoded = vec![0u64; words];
        set_bit(&mut decoded, s);
        if let Some(l) = via {
            set_bit(&mut decoded, l);
        }
        best = best.min(immediate + first_weight * dp.value(0, None, s, decoded));
    }
    best
}

#[inline]
fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

#[inline]
fn has_bit(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

struct InfiniteDp<'s, 'c> {
    scenario: &'s Scenario,
    cs: &'c CompiledStructure<'c>,
    memo: FxHashMap<(usize, usize, Vec<u64>), f64>,
}

impl InfiniteDp<'_, '_> {
    /// Every independent reconstruction of `j`: its own I-MDU, or the I-MDU of
    /// an intra-coded predictor followed by its P- and M-MDU. Each route
    /// leaves a different set of MDUs decoded.
    fn intra_routes(&self, j: usize) -> Vec<(f64, Option<usize>)> {
        let sizes = self.cs.sizes();
        let own = self.cs.is_intra(j).then(|| (sizes.intra(j), None));
        let via = self
            .cs
            .predictors_of(j)
            .iter()
            .filter(|&&l| self.cs.is_intra(l))
            .map(|&l| (sizes.intra(l) + self.cs.one_hop(l, j), Some(l)));
        own.into_iter().chain(via).collect()
    }

    fn value(&mut self, t: usize, pair: Option<usize>, cur: usize, decoded: Vec<u64>) -> f64 {
        let key = pair.map(|p| (t, p, decoded.clone()));
        if let Some(v) = key.as_ref().and_then(|k| self.memo.get(k)) {
            return *v;
        }
        let row = match pair {
            Some(p) => self.scenario.row(p),
            None => Some(self.scenario.start_row()),
        };
        let mut total = 0.0;
        if let Some(row) = row {
            let g = self.scenario.g(t + 1);
            for (pos, &target) in self.scenario.neighbors(cur).iter().enumerate() {
                let p = row[pos];
                if p == 0.0 {
                    continue;
                }
                let next_pair = self.scenario.pair_id(cur, pos);
                let mut best = f64::INFINITY;
                let mut consider = |dp: &mut Self, immediate: f64, extra: &[usize]| {
                    if immediate >= best {
                        return;
                    }
                    let cost = if g > 0.0 {
                        let mut next = decoded.clone();
                        set_bit(&mut next, target);
                        for &x in extra {
                            set_bit(&mut next, x);
                        }
                        immediate + g * dp.value(t + 1, Some(next_pair), target, next)
                    } else {
                        immediate
                    };
                    best = best.min(cost);
                };
                if has_bit(&decoded, target) {
                    consider(self, 0.0, &[]);
                }
                let one = self
                    .cs
                    .predictors_of(target)
                    .iter()
                    .filter(|&&x| has_bit(&decoded, x))
                    .map(|&x| self.cs.one_hop(x, target))
                    .fold(f64::INFINITY, f64::min);
                if one.is_finite() {
                    consider(self, one, &[]);
                }
                for &mid in self.cs.predictors_of(target) {
                    let first = self
                        .cs
                        .predictors_of(mid)
                        .iter()
                        .filter(|&&x| has_bit(&decoded, x))
                        .map(|&x| self.cs.one_hop(x, mid))
                        .fold(f64::INFINITY, f64::min);
                    if first.is_finite() {
                        consider(self, first + self.cs.one_hop(mid, target), &[mid]);
                    }
                }
                for (immediate, via) in self.intra_routes(target) {
                    match via {
                        Some(l) => consider(self, immediate, &[l]),
                        None => consider(self, immediate, &[]),
                    }
                }
                total += p * best;
            }
        }
        if let Some(k) = key {
            self.memo.insert(k, total);
        }
        total
    }
}
