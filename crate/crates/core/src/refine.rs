//! Greedy structure refinement minimizing `J = c + lambda * b`, with a
//! branch-and-bound lower bound that skips exact evaluation of candidates
//! that cannot beat the incumbent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CompiledStructure, SizeTable, Structure};
use crate::error::{Error, Result};
use crate::eval::{BufferModel, Evaluator, Substitution};
use crate::landmark::{build_initial_structure, plan_landmarks};
use crate::scenario::Scenario;

/// Which absent P-MDU edges are offered as candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidatePolicy {
    /// Every absent ordered pair.
    #[default]
    AllOrderedPairs,
    /// Pairs of MDUs that are graph neighbors or involve a landmark, with
    /// both ends within reach of the start during a session (or landmarks).
    Neighborhood,
}

/// Edges added per committed step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdditionMode {
    #[default]
    Single,
    /// Single edges, or both directions between two MDUs at once.
    SingleOrPair,
}

#[derive(Clone, Debug)]
pub struct RefinerParams {
    pub lambda: f64,
    pub buffer: BufferModel,
    pub enable_pruning: bool,
    pub candidate_policy: CandidatePolicy,
    pub additions: AdditionMode,
    pub weight_first_switch: bool,
}

impl RefinerParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) && lambda != f64::INFINITY {
            return Err(Error::InvalidParameter(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
        Ok(RefinerParams {
            lambda,
            buffer: BufferModel::Flexible,
            enable_pruning: true,
            candidate_policy: CandidatePolicy::AllOrderedPairs,
            additions: AdditionMode::Single,
            weight_first_switch: false,
        })
    }

    fn evaluator(&self) -> Evaluator {
        Evaluator::new(self.buffer).weight_first_switch(self.weight_first_switch)
    }

    fn objective(&self, cost: f64, storage: f64) -> f64 {
        if self.lambda == 0.0 {
            cost
        } else {
            cost + self.lambda * storage
        }
    }
}

/// One committed step of a greedy pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub iteration: usize,
    /// Edges added (or removed, for the subtraction pass).
    pub edges: Vec<(usize, usize)>,
    pub objective: f64,
    pub candidates: usize,
    pub pruned: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineLog {
    pub initial_objective: f64,
    pub steps: Vec<RefineStep>,
    /// Candidates skipped by the lower bound over all candidates examined.
    pub pruned_fraction: f64,
    pub candidates: usize,
    pub pruned: usize,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub structure: Structure,
    pub objective: f64,
    pub expected_cost: f64,
    pub storage: f64,
    pub log: RefineLog,
}

/// Lower bound on the expected cost of `candidate`, whose edges
/// `new_edges` were just added: requests along those transitions are priced
/// at the cheapest request cost for the rest of the session.
pub fn lower_bound_cost(
    scenario: &Scenario,
    sizes: &SizeTable,
    candidate: &Structure,
    new_edges: &[(usize, usize)],
    buffer: BufferModel,
) -> Result<f64> {
    let cs = CompiledStructure::new(candidate, sizes)?;
    Ok(bound_on(scenario, &cs, new_edges, &Evaluator::new(buffer)).0)
}

/// `(bound, exact)`: `exact` is set when no substituted transition was
/// reached, in which case the bound equals the exact cost.
fn bound_on(
    scenario: &Scenario,
    cs: &CompiledStructure<'_>,
    new_edges: &[(usize, usize)],
    eval: &Evaluator,
) -> (f64, bool) {
    let floor = cs.min_one_hop().min(cs.min_zero_hop());
    let sub = Substitution::new(scenario, new_edges.to_vec(), floor);
    let (bound, hit) = eval.run_substituted(scenario, cs, &sub);
    (bound, !hit)
}

fn allowed_pairs(
    scenario: &Scenario,
    structure: &Structure,
    policy: CandidatePolicy,
) -> Vec<(usize, usize)> {
    let n = scenario.n();
    let absent = |i: usize, j: usize| i != j && !structure.p_edges.contains(&(i, j));
    match policy {
        CandidatePolicy::AllOrderedPairs => (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| absent(i, j))
            .collect(),
        CandidatePolicy::Neighborhood => {
            let mut landmark = vec![false; n];
            for p in structure.landmarks.iter().flatten() {
                landmark[p.l] = true;
            }
            let mut region = scenario.horizon_mdus();
            for (r, &l) in region.iter_mut().zip(&landmark) {
                *r |= l;
            }
            let adjacent = |a: usize, b: usize| {
                scenario.neighbors(a).contains(&b) || scenario.neighbors(b).contains(&a)
            };
            let mut out = Vec::new();
            for i in (0..n).filter(|&i| region[i]) {
                for j in (0..n).filter(|&j| region[j]) {
                    if absent(i, j) && (adjacent(i, j) || landmark[i] || landmark[j]) {
                        out.push((i, j));
                    }
                }
            }
            out
        }
    }
}

fn candidate_sets(
    scenario: &Scenario,
    structure: &Structure,
    params: &RefinerParams,
) -> Vec<Vec<(usize, usize)>> {
    let singles = allowed_pairs(scenario, structure, params.candidate_policy);
    let mut out: Vec<Vec<(usize, usize)>> = singles.iter().map(|&e| vec![e]).collect();
    if params.additions == AdditionMode::SingleOrPair {
        let set: std::collections::BTreeSet<_> = singles.iter().copied().collect();
        for &(i, j) in &singles {
            if i < j && set.contains(&(j, i)) {
                out.push(vec![(i, j), (j, i)]);
            }
        }
    }
    out
}

/// Greedy addition of P-MDU edges while the objective strictly decreases.
///
/// Candidates are scanned in ascending order; a candidate is evaluated
/// exactly only if its lower-bounded objective does not exceed the best
/// objective found so far in the iteration. The earliest strict minimum is
/// committed, so pruning never changes the result.
pub fn greedy_refine(
    scenario: &Scenario,
    sizes: &SizeTable,
    initial: &Structure,
    params: &RefinerParams,
) -> Result<RefineOutcome> {
    let eval = params.evaluator();
    let mut structure = initial.clone();
    let mut cs = CompiledStructure::new(&structure, sizes)?;
    let mut cost = eval.cost(scenario, &cs);
    let mut objective = params.objective(cost, cs.storage());
    let mut log = RefineLog {
        initial_objective: objective,
        ..Default::default()
    };
    if params.lambda == f64::INFINITY {
        return Ok(finish(structure, objective, cost, cs.storage(), log));
    }
    for iteration in 1.. {
        let candidates = candidate_sets(scenario, &structure, params);
        let compiled: Vec<CompiledStructure<'_>> = candidates
            .iter()
            .map(|edges| {
                let mut c = cs.clone();
                for &(i, j) in edges {
                    c.add_edge(i, j);
                }
                c
            })
            .collect();
        let bounds: Vec<Option<(f64, bool)>> = if params.enable_pruning {
            compiled
                .par_iter()
                .zip(&candidates)
                .map(|(c, e)| Some(bound_on(scenario, c, e, &eval)))
                .collect()
        } else {
            vec![None; candidates.len()]
        };
        let mut best: Option<(usize, f64, f64)> = None;
        let mut incumbent = objective;
        let mut pruned = 0;
        for (idx, c) in compiled.iter().enumerate() {
            let candidate_cost = match bounds[idx] {
                Some((bound, exact)) => {
                    if params.objective(bound, c.storage()) > incumbent {
                        pruned += 1;
                        continue;
                    }
                    if exact {
                        bound
                    } else {
                        eval.cost(scenario, c)
                    }
                }
                None => eval.cost(scenario, c),
            };
            let j = params.objective(candidate_cost, c.storage());
            if j < incumbent {
                incumbent = j;
                best = Some((idx, j, candidate_cost));
            }
        }
        log.candidates += candidates.len();
        log.pruned += pruned;
        let fraction = if candidates.is_empty() {
            0.0
        } else {
            pruned as f64 / candidates.len() as f64
        };
        let Some((idx, j, c_cost)) = best else {
            log::info!(
                "iteration {iteration}: no improving candidate among {} (pruned {:.1}%)",
                candidates.len(),
                100.0 * fraction
            );
            break;
        };
        for &e in &candidates[idx] {
            structure.p_edges.insert(e);
        }
        cs = compiled
            .into_iter()
            .nth(idx)
            .expect("candidate index in range");
        cost = c_cost;
        objective = j;
        log::info!(
            "iteration {iteration}: added {:?}, J = {j:.6}, pruned {pruned}/{} ({:.1}%)",
            candidates[idx],
            candidates.len(),
            100.0 * fraction
        );
        log.steps.push(RefineStep {
            iteration,
            edges: candidates[idx].clone(),
            objective: j,
            candidates: candidates.len(),
            pruned,
        });
    }
    log.pruned_fraction = if log.candidates == 0 {
        0.0
    } else {
        log.pruned as f64 / log.candidates as f64
    };
    Ok(finish(structure, objective, cost, cs.storage(), log))
}

fn finish(
    structure: Structure,
    objective: f64,
    cost: f64,
    storage: f64,
    log: RefineLog,
) -> RefineOutcome {
    RefineOutcome {
        structure,
        objective,
        expected_cost: cost,
        storage,
        log,
    }
}

/// Greedy removal of P-MDU edges: each step removes the edge whose removal
/// yields the lowest objective, while that strictly improves it. Edges whose
/// removal breaks feasibility or the landmark layout are kept.
pub fn greedy_subtract(
    scenario: &Scenario,
    sizes: &SizeTable,
    initial: &Structure,
    params: &RefinerParams,
) -> Result<RefineOutcome> {
    let eval = params.evaluator();
    let mut structure = initial.clone();
    let cs = CompiledStructure::new(&structure, sizes)?;
    let mut cost = eval.cost(scenario, &cs);
    let mut storage = cs.storage();
    let mut objective = params.objective(cost, storage);
    let mut log = RefineLog {
        initial_objective: objective,
        ..Default::default()
    };
    for iteration in 1.. {
        let edges: Vec<(usize, usize)> = structure.p_edges.iter().copied().collect();
        let results: Vec<Option<(f64, f64)>> = edges
            .par_iter()
            .map(|e| {
                let mut s = structure.clone();
                s.p_edges.remove(e);
                let c = CompiledStructure::new(&s, sizes).ok()?;
                Some((eval.cost(scenario, &c), c.storage()))
            })
            .collect();
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for (idx, r) in results.iter().enumerate() {
            if let Some((c, b)) = *r {
                let j = params.objective(c, b);
                if j < best.map_or(objective, |x| x.1) {
                    best = Some((idx, j, c, b));
                }
            }
        }
        log.candidates += edges.len();
        let Some((idx, j, c, b)) = best else { break };
        structure.p_edges.remove(&edges[idx]);
        objective = j;
        cost = c;
        storage = b;
        log::info!(
            "subtract iteration {iteration}: removed {:?}, J = {j:.6}",
            edges[idx]
        );
        log.steps.push(RefineStep {
            iteration,
            edges: vec![edges[idx]],
            objective: j,
            candidates: edges.len(),
            pruned: 0,
        });
    }
    Ok(finish(structure, objective, cost, storage, log))
}

/// One point of a storage/transmission trade-off curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: String,
    pub lambda: f64,
    pub storage_bits: f64,
    pub expected_bits: f64,
    pub landmarks: usize,
    pub p_edges: usize,
}

impl TradeoffRow {
    pub fn from_outcome(method: &str, lambda: f64, outcome: &RefineOutcome) -> Self {
        TradeoffRow {
            method: method.to_string(),
            lambda,
            storage_bits: outcome.storage,
            expected_bits: outcome.expected_cost,
            landmarks: outcome.structure.landmark_count(),
            p_edges: outcome.structure.p_edges.len(),
        }
    }
}

/// Landmark planning followed by greedy refinement at one trade-off weight.
pub fn optimize_landmark(
    scenario: &Scenario,
    sizes: &SizeTable,
    params: &RefinerParams,
    max_lloyd_iters: usize,
) -> Result<RefineOutcome> {
    let partitions = plan_landmarks(scenario, sizes, params.lambda, max_lloyd_iters)?;
    let initial = build_initial_structure(&partitions);
    greedy_refine(scenario, sizes, &initial, params)
}

/// Landmark-initialized optimization at every `lambda`, rows sorted by
/// `lambda`.
pub fn sweep(
    scenario: &Scenario,
    sizes: &SizeTable,
    lambdas: &[f64],
    params: &RefinerParams,
) -> Result<Vec<TradeoffRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one lambda".into(),
        ));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .map(|&lambda| {
            let p = RefinerParams {
                lambda,
                ..params.clone()
            };
            let out = optimize_landmark(scenario, sizes, &p, 100).map_err(|e| {
                Error::InvalidParameter(format!("sweep failed at lambda = {lambda}: {e}"))
            })?;
            log::info!(
                "lambda {lambda}: storage {:.1}, expected {:.3}",
                out.storage,
                out.expected_cost
            );
            Ok(TradeoffRow::from_outcome("flex-lm", lambda, &out))
        })
        .collect()
}
