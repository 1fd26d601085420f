//! Scenario generators for light-field view-area grids and 360-degree
//! viewport trajectory logs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::BufRead;
use std::num::NonZeroUsize;
use std::path::Path;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::cost::SizeTable;
use crate::error::{Error, Result};
use crate::scenario::{MediaGraph, NavigationModel};

/// A `rows x cols` grid of unit view-areas, each bounded by four anchor views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfGridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Width of the Gaussian view-switch kernel, in view-area units.
    pub sigma: f64,
    /// Base predicted-MDU size in bits.
    pub p_unit: f64,
    /// Gauss-Legendre nodes per coordinate of each view-area.
    pub quad_samples: usize,
}

impl Default for LfGridSpec {
    fn default() -> Self {
        LfGridSpec {
            rows: 4,
            cols: 4,
            sigma: 0.5,
            p_unit: 1.0,
            quad_samples: 4,
        }
    }
}

impl LfGridSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        LfGridSpec {
            rows,
            cols,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.p_unit > 0.0 && self.p_unit.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "p_unit must be positive, got {}",
                self.p_unit
            )));
        }
        if self.quad_samples == 0 {
            return Err(Error::InvalidParameter(
                "quad_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn mdu_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn anchor_count(&self) -> usize {
        (self.rows + 1) * (self.cols + 1)
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn coords(&self, j: usize) -> (usize, usize) {
        (j / self.cols, j % self.cols)
    }

    pub fn center(&self) -> usize {
        self.index((self.rows - 1) / 2, (self.cols - 1) / 2)
    }

    pub fn chebyshev(&self, i: usize, j: usize) -> usize {
        let (ri, ci) = self.coords(i);
        let (rj, cj) = self.coords(j);
        ri.abs_diff(rj).max(ci.abs_diff(cj))
    }

    /// 8-connected neighbors in row-major order.
    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        let (r, c) = self.coords(j);
        let mut out = Vec::with_capacity(8);
        for nr in r.saturating_sub(1)..=(r + 1).min(self.rows - 1) {
            for nc in c.saturating_sub(1)..=(c + 1).min(self.cols - 1) {
                if (nr, nc) != (r, c) {
                    out.push(self.index(nr, nc));
                }
            }
        }
        out
    }
}

fn gaussian(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp()
}

/// Per-axis kernel integrals. `second[d + 2]` integrates the second-difference
/// kernel over three unit intervals whose integer offsets sum to `d`;
/// `first[d + 1]` integrates the displacement kernel over two unit intervals
/// offset by `d`.
struct AxisKernels {
    second: [f64; 5],
    first: [f64; 3],
}

impl AxisKernels {
    fn new(sigma: f64, samples: usize) -> Self {
        let quad = GaussLegendre::new(NonZeroUsize::new(samples).expect("validated sample count"));
        let second = std::array::from_fn(|idx| {
            let d = idx as f64 - 2.0;
            quad.integrate(0.0, 1.0, |s| {
                quad.integrate(0.0, 1.0, |t| {
                    quad.integrate(0.0, 1.0, |r| gaussian(d + s - 2.0 * t + r, sigma))
                })
            })
        });
        let first = std::array::from_fn(|idx| {
            let d = idx as f64 - 1.0;
            quad.integrate(0.0, 1.0, |o| {
                quad.integrate(0.0, 1.0, |w| gaussian(d + w - o, sigma))
            })
        });
        AxisKernels { second, first }
    }

    fn second(&self, prev_off: isize, next_off: isize) -> f64 {
        self.second[(prev_off + next_off + 2) as usize]
    }

    fn first(&self, off: isize) -> f64 {
        self.first[(off + 1) as usize]
    }
}

fn normalized(weights: Vec<(usize, f64)>) -> impl Iterator<Item = (usize, f64)> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    weights.into_iter().map(move |(j, w)| (j, w / total))
}

/// Graph, Gaussian navigation model and distance-based sizes for a light-field
/// view-area grid. The user starts in the center view-area.
pub fn build_lf_scenario(spec: &LfGridSpec) -> Result<(MediaGraph, NavigationModel, SizeTable)> {
    spec.validate()?;
    let n = spec.mdu_count();
    let neighbors: Vec<Vec<usize>> = (0..n).map(|j| spec.neighbors(j)).collect();
    let start = spec.center();
    let graph = MediaGraph::new(n, start, neighbors.clone())?;
    let kern = AxisKernels::new(spec.sigma, spec.quad_samples);
    let offset = |from: usize, to: usize| {
        let (fr, fc) = spec.coords(from);
        let (tr, tc) = spec.coords(to);
        (tr as isize - fr as isize, tc as isize - fc as isize)
    };

    let p_start = normalized(
        neighbors[start]
            .iter()
            .map(|&j| {
                let (dr, dc) = offset(start, j);
                (j, kern.first(dr) * kern.first(dc))
            })
            .collect(),
    )
    .collect();

    let mut p_switch = BTreeMap::new();
    for k in 0..n {
        for &i in &neighbors[k] {
            let (ar, ac) = offset(i, k);
            let row = neighbors[i]
                .iter()
                .map(|&j| {
                    let (br, bc) = offset(i, j);
                    (j, kern.second(ar, br) * kern.second(ac, bc))
                })
                .collect();
            for (j, p) in normalized(row) {
                p_switch.insert((k, i, j), p);
            }
        }
    }
    let sizes = SizeTable::synthetic(n, spec.p_unit, |i, j| spec.chebyshev(i, j) as f64)?;
    Ok((graph, NavigationModel { p_start, p_switch }, sizes))
}

/// Lifetime defaults from the anchor-view count: `t_max = floor(count / 3)`,
/// `mu = t_max / 2`.
pub fn lifetime_defaults(anchor_view_count: usize) -> Result<(f64, usize)> {
    if anchor_view_count < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 anchor views, got {anchor_view_count}"
        )));
    }
    let t_max = anchor_view_count / 3;
    Ok((0.5 * t_max as f64, t_max))
}

/// Lifetime used for 360-degree viewport scenarios.
pub const VIEWPORT_LIFETIME: (f64, usize) = (3.0, 8);

/// Additive smoothing applied to observed transition counts.
pub const SMOOTHING: f64 = 1e-3;

/// Viewport visit sequences, one per user session.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub sessions: Vec<Vec<usize>>,
}

impl TrajectoryLog {
    /// One session per line as space-separated viewport indices; blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut sessions = Vec::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>().map_err(|e| {
                        Error::Format(format!("line {}: bad viewport index {tok:?}: {e}", no + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sessions.push(seq);
        }
        Ok(TrajectoryLog { sessions })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in &self.sessions {
            let line: Vec<String> = s.iter().map(usize::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn smoothed_row(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    let denom = total + SMOOTHING * counts.len() as f64;
    counts.iter().map(|c| (c + SMOOTHING) / denom).collect()
}

/// Estimates a second-order navigation model from viewport trajectories.
///
/// Consecutive repeats are collapsed. `N(i)` is the set of viewports ever
/// observed right after `i`; a viewport never left in the log gets every other
/// viewport as a uniform successor. Rows over `N(i)` come from smoothed
/// `(prev, cur) -> next` counts, or from smoothed `cur -> next` counts when the
/// state `(prev, cur)` was never seen. The start is the most common first
/// viewport.
pub fn build_viewport_scenario(
    log: &TrajectoryLog,
    n_viewports: usize,
) -> Result<(MediaGraph, NavigationModel)> {
    if n_viewports < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 viewports, got {n_viewports}"
        )));
    }
    if log.sessions.is_empty() || log.sessions.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParameter(
            "trajectory log needs non-empty sessions".into(),
        ));
    }
    let sessions: Vec<Vec<usize>> = log
        .sessions
        .iter()
        .map(|s| {
            if let Some(&bad) = s.iter().find(|&&v| v >= n_viewports) {
                return Err(Error::InvalidParameter(format!(
                    "viewport {bad} outside 0..{n_viewports}"
                )));
            }
            let mut s = s.clone();
            s.dedup();
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let mut pair_counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut triple_counts: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut first_views = vec![0usize; n_viewports];
    for s in &sessions {
        first_views[s[0]] += 1;
        for w in s.windows(2) {
            *pair_counts.entry((w[0], w[1])).or_default() += 1.0;
        }
        for w in s.windows(3) {
            *triple_counts.entry((w[0], w[1], w[2])).or_default() += 1.0;
        }
    }
    let mut successors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_viewports];
    for &(i, j) in pair_counts.keys() {
        successors[i].insert(j);
    }
    let neighbors: Vec<Vec<usize>> = successors
        .into_iter()
        .enumerate()
        .map(|(i, set)| {
            if set.is_empty() {
                log::warn!("viewport {i} is never left in the log; using uniform switches to all other viewports");
                (0..n_viewports).filter(|&j| j != i).collect()
            } else {
                set.into_iter().collect()
            }
        })
        .collect();
    let start = (0..n_viewports)
        .max_by_key(|&v| (first_views[v], std::cmp::Reverse(v)))
        .expect("n_viewports >= 2");
    let graph = MediaGraph::new(n_viewports, start, neighbors.clone())?;

    let first_order = |i: usize| -> Vec<f64> {
        neighbors[i]
            .iter()
            .map(|&j| pair_counts.get(&(i, j)).copied().unwrap_or(0.0))
            .collect()
    };

    let mut start_counts = vec![0.0; neighbors[start].len()];
    for s in sessions.iter().filter(|s| s[0] == start && s.len() > 1) {
        let pos = neighbors[start]
            .iter()
            .position(|&j| j == s[1])
            .expect("observed successor");
        start_counts[pos] += 1.0;
    }
    if start_counts.iter().sum::<f64>() == 0.0 {
        start_counts = first_order(start);
    }
    let p_start = neighbors[start]
        .iter()
        .copied()
        .zip(smoothed_row(&start_counts))
        .collect();

    let mut p_switch = BTreeMap::new();
    for k in 0..n_viewports {
        for &i in &neighbors[k] {
            let mut counts: Vec<f64> = neighbors[i]
                .iter()
                .map(|&j| triple_counts.get(&(k, i, j)).copied().unwrap_or(0.0))
                .collect();
            if counts.iter().sum::<f64>() == 0.0 {
                counts = first_order(i);
            }
            for (&j, p) in neighbors[i].iter().zip(smoothed_row(&counts)) {
                p_switch.insert((k, i, j), p);
            }
        }
    }
    Ok((graph, NavigationModel { p_start, p_switch }))
}

/// Undirected hop distances over the switch graph; unreachable pairs get
/// distance `n`.
pub fn hop_distances(graph: &MediaGraph) -> Vec<Vec<usize>> {
    let n = graph.n;
    let mut adj = vec![BTreeSet::new(); n];
    for i in 0..n {
        for &j in graph.neighbors(i) {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    (0..n)
        .map(|src| {
            let mut dist = vec![n; n];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == n && v != src {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Synthetic sizes growing with the hop distance between viewports.
pub fn viewport_sizes(graph: &MediaGraph, p_unit: f64) -> Result<SizeTable> {
    let dist = hop_distances(graph);
    SizeTable::synthetic(graph.n, p_unit, |i, j| dist[i][j] as f64)
}
