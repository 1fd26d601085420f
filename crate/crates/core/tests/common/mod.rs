#![allow(dead_code)]

use std::collections::BTreeMap;

use navstream::cost::{SizeTable, Structure};
use navstream::scenario::{LifetimeModel, MediaGraph, NavigationModel, Scenario};
use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_row(rng: &mut impl Rng, len: usize, zero_prob: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random_bool(zero_prob) {
                0.0
            } else {
                0.05 + rng.random::<f64>()
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..len)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Sparse random graph with every out-degree in `1..=k_max` and row-stochastic
/// second-order switch probabilities.
pub fn random_scenario(
    rng: &mut impl Rng,
    n: usize,
    k_max: usize,
    mu: f64,
    t_max: usize,
) -> Scenario {
    assert!(n >= 2 && k_max >= 1);
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(rng);
        let deg = rng.random_range(1..=k_max.min(n - 1));
        let mut list: Vec<usize> = others.into_iter().take(deg).collect();
        list.sort_unstable();
        neighbors.push(list);
    }
    let start = rng.random_range(0..n);
    let p_start = neighbors[start]
        .iter()
        .copied()
        .zip(random_row(rng, neighbors[start].len(), 0.0))
        .collect();
    let mut p_switch = BTreeMap::new();
    for k in 0..n {
        for &i in &neighbors[k] {
            for (&j, p) in neighbors[i]
                .iter()
                .zip(random_row(rng, neighbors[i].len(), 0.2))
            {
                p_switch.insert((k, i, j), p);
            }
        }
    }
    let graph = MediaGraph::new(n, start, neighbors).unwrap();
    Scenario::new(
        graph,
        NavigationModel { p_start, p_switch },
        LifetimeModel::new(mu, t_max).unwrap(),
    )
    .unwrap()
}

pub fn random_sizes(rng: &mut impl Rng, n: usize) -> SizeTable {
    let intra: Vec<f64> = (0..n).map(|_| rng.random_range(8.0..14.0)).collect();
    let merge: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..4.0)).collect();
    let pred: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.5..8.0)).collect();
    SizeTable::from_fn(n, |j| intra[j], |j| merge[j], |i, j| pred[i * n + j]).unwrap()
}

/// Feasible random structure: a non-empty I-MDU set, a landmark edge into every
/// other MDU and a sprinkling of extra P-MDU edges.
pub fn random_structure(rng: &mut impl Rng, n: usize, extra: f64) -> Structure {
    let mut s = Structure::default();
    for j in 0..n {
        if rng.random_bool(0.4) {
            s.i_set.insert(j);
        }
    }
    if s.i_set.is_empty() {
        s.i_set.insert(rng.random_range(0..n));
    }
    let intra: Vec<usize> = s.i_set.iter().copied().collect();
    for j in (0..n).filter(|j| !s.i_set.contains(j)) {
        s.p_edges
            .insert((intra[rng.random_range(0..intra.len())], j));
    }
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if rng.random_bool(extra) {
                s.p_edges.insert((i, j));
            }
        }
    }
    s
}

/// Random tiny instance within the oracle limits.
pub fn random_instance(seed: u64, max_n: usize, max_t: usize) -> (Scenario, SizeTable, Structure) {
    let mut r = rng(seed);
    let n = r.random_range(2..=max_n);
    let t_max = r.random_range(1..=max_t);
    let mu = r.random_range(0.5..3.0);
    let sc = random_scenario(&mut r, n, 3, mu, t_max);
    let sizes = random_sizes(&mut r, n);
    let st = random_structure(&mut r, n, 0.25);
    (sc, sizes, st)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
