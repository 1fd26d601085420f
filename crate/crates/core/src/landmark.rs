//! Landmark placement by recursive two-way splitting of partitions, each
//! split refined by alternating assignment and landmark update.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cost::{LandmarkPartition, SizeTable, Structure};
use crate::error::{Error, Result};
use crate::scenario::{aggregate_switch_probabilities, AggregateSwitchProbs, Scenario};

/// A landmark and the MDUs it serves; `members` is sorted and contains the
/// landmark.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub landmark: usize,
    pub members: Vec<usize>,
}

impl Partition {
    pub fn new(landmark: usize, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        debug_assert!(members.binary_search(&landmark).is_ok());
        Partition { landmark, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PlannerParams<'a> {
    /// Storage weight relative to transmission, `lambda / mu`.
    pub w: f64,
    pub max_lloyd_iters: usize,
    pub q: &'a AggregateSwitchProbs,
}

impl<'a> PlannerParams<'a> {
    pub fn new(w: f64, q: &'a AggregateSwitchProbs) -> Result<Self> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "storage weight must be non-negative, got {w}"
            )));
        }
        Ok(PlannerParams {
            w,
            max_lloyd_iters: 100,
            q,
        })
    }
}

fn mask(n: usize, members: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &j in members {
        m[j] = true;
    }
    m
}

/// `r^P_j(l)`, with a request for the buffered landmark itself free.
#[inline]
fn via_landmark(sizes: &SizeTable, l: usize, j: usize) -> f64 {
    if j == l {
        0.0
    } else {
        sizes.pred(l, j) + sizes.merge(j)
    }
}

/// Within-partition cost of serving `members` from landmark `l`: expected
/// switch traffic predicted from `l` plus weighted storage of `I_l` and the
/// members' P-MDUs.
pub fn phi(members: &[usize], l: usize, sizes: &SizeTable, params: &PlannerParams<'_>) -> f64 {
    let inside = mask(sizes.n(), members);
    let mut traffic = 0.0;
    let mut storage = sizes.intra(l);
    for &i in members {
        for (j, q) in params.q.row(i) {
            if inside[j] {
                traffic += q * via_landmark(sizes, l, j);
            }
        }
        if i != l {
            storage += sizes.pred(l, i);
        }
    }
    traffic + params.w * storage
}

pub fn partition_cost(p: &Partition, sizes: &SizeTable, params: &PlannerParams<'_>) -> f64 {
    phi(&p.members, p.landmark, sizes, params)
}

/// Cost of switches between two partitions, each routed through both
/// landmarks, plus the weighted storage of the two inter-landmark P-MDUs.
pub fn delta(p1: &Partition, p2: &Partition, sizes: &SizeTable, params: &PlannerParams<'_>) -> f64 {
    let (l1, l2) = (p1.landmark, p2.landmark);
    let cross = |from: &Partition, to: &Partition, lf: usize, lt: usize| {
        let inside = mask(sizes.n(), &to.members);
        let hop = sizes.pred(lf, lt) + sizes.merge(lt);
        let mut acc = 0.0;
        for &i in &from.members {
            for (j, q) in params.q.row(i) {
                if inside[j] {
                    acc += q * (hop + via_landmark(sizes, lt, j));
                }
            }
        }
        acc
    };
    cross(p1, p2, l1, l2)
        + cross(p2, p1, l2, l1)
        + params.w * (sizes.pred(l1, l2) + sizes.pred(l2, l1))
}

/// Member whose cost to serve from the current landmark, net of the
/// storage saved by making it a landmark itself, is largest.
pub fn furthest_init(
    partition: &Partition,
    sizes: &SizeTable,
    params: &PlannerParams<'_>,
) -> Result<usize> {
    if partition.len() < 2 {
        return Err(Error::InvalidParameter(
            "a split needs at least two members".into(),
        ));
    }
    let l = partition.landmark;
    let inside = mask(sizes.n(), &partition.members);
    let mut best: Option<(f64, usize)> = None;
    for &i in &partition.members {
        if i == l {
            continue;
        }
        let mut score = params.w * (sizes.pred(l, i) - sizes.intra(i));
        for (j, q) in params.q.row(i) {
            if inside[j] {
                score += q * via_landmark(sizes, l, j);
            }
        }
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, i));
        }
    }
    Ok(best.expect("partition has a non-landmark member").1)
}

/// `argmin_l phi(members, l)` over `l in members`, ties to the lowest
/// index, using inflow totals so the scan is quadratic in the partition.
pub fn best_landmark(
    members: &[usize],
    sizes: &SizeTable,
    params: &PlannerParams<'_>,
) -> (usize, f64) {
    let n = sizes.n();
    let inside = mask(n, members);
    let mut inflow = vec![0.0; n];
    for &i in members {
        for (j, q) in params.q.row(i) {
            if inside[j] {
                inflow[j] += q;
            }
        }
    }
    let w = params.w;
    let mut best = (members[0], f64::INFINITY);
    for &l in members {
        let mut cost = w * sizes.intra(l);
        for &j in members {
            if j != l {
                let p = sizes.pred(l, j);
                cost += inflow[j] * (p + sizes.merge(j)) + w * p;
            }
        }
        if cost < best.1 {
            best = (l, cost);
        }
    }
    best
}

/// Splits a partition in two: the far member seeds the second landmark,
/// then members move to the landmark with the smaller P-MDU and each
/// landmark moves to its partition's cost minimizer, until stable.
pub fn lloyd_split(
    partition: &Partition,
    sizes: &SizeTable,
    params: &PlannerParams<'_>,
) -> Result<(Partition, Partition)> {
    let mut l1 = partition.landmark;
    let mut l2 = furthest_init(partition, sizes, params)?;
    let members = &partition.members;
    let mut side: Vec<bool> = members.iter().map(|&j| j == l2).collect();
    for _ in 0..params.max_lloyd_iters {
        let next: Vec<bool> = members
            .iter()
            .map(|&j| {
                if j == l1 {
                    false
                } else if j == l2 {
                    true
                } else {
                    sizes.pred(l2, j) < sizes.pred(l1, j)
                }
            })
            .collect();
        let (m1, m2) = split_members(members, &next);
        let (n1, _) = best_landmark(&m1, sizes, params);
        let (n2, _) = best_landmark(&m2, sizes, params);
        let stable = next == side && n1 == l1 && n2 == l2;
        side = next;
        l1 = n1;
        l2 = n2;
        if stable {
            break;
        }
    }
    let (m1, m2) = split_members(members, &side);
    Ok((Partition::new(l1, m1), Partition::new(l2, m2)))
}

fn split_members(members: &[usize], side: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (&j, &s) in members.iter().zip(side) {
        if s {
            b.push(j)
        } else {
            a.push(j)
        }
    }
    (a, b)
}

/// Outcome of testing one partition for a split.
#[derive(Clone, Debug)]
pub struct SplitCheck {
    pub parent_cost: f64,
    pub children: (Partition, Partition),
    pub children_cost: f64,
}

impl SplitCheck {
    pub fn beneficial(&self) -> bool {
        self.children_cost < self.parent_cost
    }
}

/// Best two-way split of a partition and whether it lowers the cost.
pub fn check_split(
    partition: &Partition,
    sizes: &SizeTable,
    params: &PlannerParams<'_>,
) -> Result<Option<SplitCheck>> {
    if partition.len() < 2 {
        return Ok(None);
    }
    let (a, b) = lloyd_split(partition, sizes, params)?;
    let children_cost = partition_cost(&a, sizes, params)
        + partition_cost(&b, sizes, params)
        + delta(&a, &b, sizes, params);
    Ok(Some(SplitCheck {
        parent_cost: partition_cost(partition, sizes, params),
        children: (a, b),
        children_cost,
    }))
}

/// Recursive splitting from a single root partition, FIFO over pending
/// partitions. Returns the final partitions sorted by landmark.
pub fn tsvq(
    scenario: &Scenario,
    sizes: &SizeTable,
    params: &PlannerParams<'_>,
) -> Result<Vec<Partition>> {
    if sizes.n() != scenario.n() {
        return Err(Error::CorruptTable(format!(
            "size table covers {} MDUs, scenario has {}",
            sizes.n(),
            scenario.n()
        )));
    }
    let all: Vec<usize> = (0..scenario.n()).collect();
    let (root, _) = best_landmark(&all, sizes, params);
    let mut queue = VecDeque::from([Partition::new(root, all)]);
    let mut done = Vec::new();
    while let Some(p) = queue.pop_front() {
        match check_split(&p, sizes, params)? {
            Some(check) if check.beneficial() => {
                log::debug!(
                    "split landmark {} ({} members): {:.3} -> {:.3}",
                    p.landmark,
                    p.len(),
                    check.parent_cost,
                    check.children_cost
                );
                queue.push_back(check.children.0);
                queue.push_back(check.children.1);
            }
            _ => done.push(p),
        }
    }
    done.sort_by_key(|p| p.landmark);
    Ok(done)
}

/// Landmark planning for a trade-off weight `lambda`, with the aggregate
/// switch probabilities derived from the scenario.
pub fn plan_landmarks(
    scenario: &Scenario,
    sizes: &SizeTable,
    lambda: f64,
    max_lloyd_iters: usize,
) -> Result<Vec<Partition>> {
    let q = aggregate_switch_probabilities(scenario);
    let mut params = PlannerParams::new(lambda / scenario.lifetime().mu(), &q)?;
    params.max_lloyd_iters = max_lloyd_iters;
    tsvq(scenario, sizes, &params)
}

/// Landmark I-MDUs, landmark-to-member P-MDUs and P-MDUs between every
/// ordered pair of landmarks.
pub fn build_initial_structure(partitions: &[Partition]) -> Structure {
    let mut s = Structure::default();
    for p in partitions {
        s.i_set.insert(p.landmark);
        for &j in &p.members {
            if j != p.landmark {
                s.p_edges.insert((p.landmark, j));
            }
        }
        for q in partitions {
            if q.landmark != p.landmark {
                s.p_edges.insert((p.landmark, q.landmark));
            }
        }
    }
    s.landmarks = Some(
        partitions
            .iter()
            .map(|p| LandmarkPartition {
                l: p.landmark,
                members: p.members.iter().copied().collect(),
            })
            .collect(),
    );
    s
}
