//! Coding sizes, the stored structure and the per-request overheads built
//! from them.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coding sizes in bits: `|I_j|`, `|M_j|` and `|P_j(i)|` for every ordered
/// pair `i != j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeTable {
    n: usize,
    intra: Vec<f64>,
    merge: Vec<f64>,
    /// Row-major by predictor: `pred[i * n + j] = |P_j(i)|`; the diagonal is
    /// infinite.
    pred: Vec<f64>,
}

fn check_size(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::CorruptTable(format!(
            "{what} = {v} is not a positive size"
        )))
    }
}

impl SizeTable {
    /// `pred(i, j)` supplies `|P_j(i)|` for `i != j`.
    pub fn from_fn(
        n: usize,
        intra: impl Fn(usize) -> f64,
        merge: impl Fn(usize) -> f64,
        pred: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut table = SizeTable {
            n,
            intra: (0..n).map(&intra).collect(),
            merge: (0..n).map(&merge).collect(),
            pred: vec![f64::INFINITY; n * n],
        };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    table.pred[i * n + j] = pred(i, j);
                }
            }
        }
        table.validate()?;
        Ok(table)
    }

    /// Distance-proportional synthetic sizes: `|P_j(i)| = unit (0.2 + 0.8
    /// d(i, j))`, `|I| = 11 unit`, `|M| = 3.5 unit`.
    pub fn synthetic(
        n: usize,
        p_unit: f64,
        distance: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        Self::from_fn(
            n,
            |_| 11.0 * p_unit,
            |_| 3.5 * p_unit,
            |i, j| p_unit * (0.2 + 0.8 * distance(i, j)),
        )
    }

    fn validate(&self) -> Result<()> {
        for j in 0..self.n {
            check_size(&format!("|I_{j}|"), self.intra[j])?;
            check_size(&format!("|M_{j}|"), self.merge[j])?;
            for i in 0..self.n {
                if i != j {
                    check_size(&format!("|P_{j}({i})|"), self.pred[i * self.n + j])?;
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn intra(&self, j: usize) -> f64 {
        self.intra[j]
    }

    #[inline]
    pub fn merge(&self, j: usize) -> f64 {
        self.merge[j]
    }

    /// `|P_target(pred)|`.
    #[inline]
    pub fn pred(&self, pred: usize, target: usize) -> f64 {
        self.pred[pred * self.n + target]
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j < self.n {
            Ok(())
        } else {
            Err(Error::CorruptTable(format!(
                "no sizes for MDU {j} (table covers {})",
                self.n
            )))
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let rec: SizeRecord = rec?;
            rows.push(rec);
        }
        let n = rows
            .iter()
            .map(|r| r.i.max(r.j.unwrap_or(0)) + 1)
            .max()
            .unwrap_or(0);
        let mut intra = vec![f64::NAN; n];
        let mut merge = vec![f64::NAN; n];
        let mut pred = vec![f64::NAN; n * n];
        for r in rows {
            let slot = match (r.kind.as_str(), r.j) {
                ("I", None) => &mut intra[r.i],
                ("M", None) => &mut merge[r.i],
                ("P", Some(j)) if j != r.i => &mut pred[r.i * n + j],
                _ => {
                    return Err(Error::CorruptTable(format!(
                        "bad row kind={} i={} j={:?}",
                        r.kind, r.i, r.j
                    )))
                }
            };
            if !slot.is_nan() {
                return Err(Error::CorruptTable(format!(
                    "duplicate row kind={} i={} j={:?}",
                    r.kind, r.i, r.j
                )));
            }
            *slot = r.bits;
        }
        for j in 0..n {
            pred[j * n + j] = f64::INFINITY;
        }
        let table = SizeTable {
            n,
            intra,
            merge,
            pred,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for j in 0..self.n {
            w.serialize(SizeRecord {
                kind: "I".into(),
                i: j,
                j: None,
                bits: self.intra[j],
            })?;
            w.serialize(SizeRecord {
                kind: "M".into(),
                i: j,
                j: None,
                bits: self.merge[j],
            })?;
        }
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    w.serialize(SizeRecord {
                        kind: "P".into(),
                        i,
                        j: Some(j),
                        bits: self.pred(i, j),
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SizeRecord {
    kind: String,
    i: usize,
    j: Option<usize>,
    bits: f64,
}

/// A landmark and the MDUs it serves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkPartition {
    pub l: usize,
    pub members: BTreeSet<usize>,
}

/// The stored representation set: I-MDUs, P-MDU edges `(predictor, target)`
/// and the optional landmark assignment. M-MDUs are stored for every MDU.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Structure {
    pub i_set: BTreeSet<usize>,
    pub p_edges: BTreeSet<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<LandmarkPartition>>,
}

impl Structure {
    /// Every MDU intra-coded, no P-MDUs.
    pub fn all_intra(n: usize) -> Self {
        Structure {
            i_set: (0..n).collect(),
            ..Default::default()
        }
    }

    /// Checks index ranges, self edges and landmark consistency.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidStructure(msg));
        if let Some(&j) = self.i_set.iter().find(|&&j| j >= n) {
            return bad(format!("I-MDU {j} out of range"));
        }
        for &(i, j) in &self.p_edges {
            if i == j {
                return Err(Error::SelfPrediction(i));
            }
            if i >= n || j >= n {
                return bad(format!("P edge ({i}, {j}) out of range"));
            }
        }
        let Some(parts) = &self.landmarks else {
            return Ok(());
        };
        let mut seen = vec![false; n];
        for part in parts {
            if !part.members.contains(&part.l) {
                return bad(format!(
                    "landmark {} is not a member of its partition",
                    part.l
                ));
            }
            if !self.i_set.contains(&part.l) {
                return bad(format!("landmark {} has no I-MDU", part.l));
            }
            for &j in &part.members {
                if j >= n {
                    return bad(format!("partition member {j} out of range"));
                }
                if std::mem::replace(&mut seen[j], true) {
                    return bad(format!("MDU {j} belongs to two partitions"));
                }
                if j != part.l && !self.p_edges.contains(&(part.l, j)) {
                    return bad(format!("missing landmark edge ({}, {j})", part.l));
                }
            }
        }
        if let Some(j) = seen.iter().position(|&s| !s) {
            return bad(format!("MDU {j} is in no partition"));
        }
        for a in parts {
            for b in parts {
                if a.l != b.l && !self.p_edges.contains(&(a.l, b.l)) {
                    return bad(format!("missing inter-landmark edge ({}, {})", a.l, b.l));
                }
            }
        }
        Ok(())
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.as_ref().map_or(0, Vec::len)
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Total bits of stored I- and P-MDUs; M-MDUs are excluded.
pub fn storage_cost(structure: &Structure, sizes: &SizeTable) -> Result<f64> {
    let mut bits = 0.0;
    for &j in &structure.i_set {
        sizes.check_index(j)?;
        bits += sizes.intra(j);
    }
    for &(i, j) in &structure.p_edges {
        sizes.check_index(i)?;
        sizes.check_index(j)?;
        if i == j {
            return Err(Error::SelfPrediction(i));
        }
        bits += sizes.pred(i, j);
    }
    Ok(bits)
}

/// `|P_target(pred)| + |M_target|` if the edge is stored, `None` otherwise.
pub fn one_hop_overhead(
    structure: &Structure,
    sizes: &SizeTable,
    pred: usize,
    target: usize,
) -> Result<Option<f64>> {
    if pred == target {
        return Err(Error::SelfPrediction(pred));
    }
    sizes.check_index(pred)?;
    sizes.check_index(target)?;
    Ok(structure
        .p_edges
        .contains(&(pred, target))
        .then(|| sizes.pred(pred, target) + sizes.merge(target)))
}

/// How an independent reconstruction of an MDU is sent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntraSource {
    /// The MDU's own I-MDU.
    Own,
    /// `I_l + P_j(l) + M_j` through the given I-coded MDU.
    Via(usize),
}

/// Cheapest independent reconstruction of `target` and how it is formed.
pub fn zero_hop_choice(
    structure: &Structure,
    sizes: &SizeTable,
    target: usize,
) -> Result<(f64, IntraSource)> {
    sizes.check_index(target)?;
    let mut best: Option<(f64, IntraSource)> = structure
        .i_set
        .contains(&target)
        .then(|| (sizes.intra(target), IntraSource::Own));
    for &l in &structure.i_set {
        if l != target && structure.p_edges.contains(&(l, target)) {
            let cost = sizes.intra(l) + (sizes.pred(l, target) + sizes.merge(target));
            if best.is_none_or(|(b, _)| cost < b) {
                best = Some((cost, IntraSource::Via(l)));
            }
        }
    }
    best.ok_or(Error::Infeasible(target))
}

/// Cheapest independent reconstruction of `target`.
pub fn zero_hop_overhead(structure: &Structure, sizes: &SizeTable, target: usize) -> Result<f64> {
    zero_hop_choice(structure, sizes, target).map(|(c, _)| c)
}

/// Structure lowered to dense lookups for the evaluators.
#[derive(Clone, Debug)]
pub struct CompiledStructure<'a> {
    sizes: &'a SizeTable,
    n: usize,
    is_intra: Vec<bool>,
    edges: Vec<u64>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    zero_hop: Vec<(f64, IntraSource)>,
    storage: f64,
    min_one_hop: f64,
    edge_count: usize,
}

impl<'a> CompiledStructure<'a> {
    /// Fails if any MDU has no independent reconstruction.
    pub fn new(structure: &Structure, sizes: &'a SizeTable) -> Result<Self> {
        let n = sizes.n();
        structure.validate(n)?;
        let mut is_intra = vec![false; n];
        for &j in &structure.i_set {
            is_intra[j] = true;
        }
        let mut c = CompiledStructure {
            sizes,
            n,
            is_intra,
            edges: vec![0; (n * n).div_ceil(64)],
            out_adj: vec![Vec::new(); n],
            in_adj: vec![Vec::new(); n],
            zero_hop: Vec::new(),
            storage: storage_cost(structure, sizes)?,
            min_one_hop: f64::INFINITY,
            edge_count: 0,
        };
        // BTreeSet order keeps both adjacency lists sorted.
        for &(i, j) in &structure.p_edges {
            c.set_edge(i, j);
            c.out_adj[i].push(j);
            c.in_adj[j].push(i);
            c.min_one_hop = c.min_one_hop.min(c.one_hop_raw(i, j));
            c.edge_count += 1;
        }
        c.zero_hop = (0..n)
            .map(|j| zero_hop_choice(structure, sizes, j))
            .collect::<Result<_>>()?;
        Ok(c)
    }

    #[inline]
    fn set_edge(&mut self, i: usize, j: usize) {
        let bit = i * self.n + j;
        self.edges[bit / 64] |= 1 << (bit % 64);
    }

    #[inline]
    fn one_hop_raw(&self, i: usize, j: usize) -> f64 {
        self.sizes.pred(i, j) + self.sizes.merge(j)
    }

    /// Copy with an extra stored edge; the caller guarantees it is absent.
    pub fn with_edge(&self, i: usize, j: usize) -> Self {
        let mut c = self.clone();
        c.add_edge(i, j);
        c
    }

    /// Adds a stored edge in place (no-op when present).
    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "self edge ({i}, {i})");
        if self.has_edge(i, j) {
            return;
        }
        self.set_edge(i, j);
        let pos = self.out_adj[i].partition_point(|&x| x < j);
        self.out_adj[i].insert(pos, j);
        let pos = self.in_adj[j].partition_point(|&x| x < i);
        self.in_adj[j].insert(pos, i);
        let raw = self.one_hop_raw(i, j);
        self.min_one_hop = self.min_one_hop.min(raw);
        self.storage += self.sizes.pred(i, j);
        self.edge_count += 1;
        if self.is_intra[i] {
            let cand = self.sizes.intra(i) + raw;
            let (best, src) = self.zero_hop[j];
            let better =
                cand < best || (cand == best && matches!(src, IntraSource::Via(l) if i < l));
            if better {
                self.zero_hop[j] = (cand, IntraSource::Via(i));
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_intra(&self, j: usize) -> bool {
        self.is_intra[j]
    }

    pub fn sizes(&self) -> &'a SizeTable {
        self.sizes
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let bit = i * self.n + j;
        self.edges[bit / 64] >> (bit % 64) & 1 == 1
    }

    /// `r^P_j(i)`: one-hop cost, infinite when the edge is not stored.
    #[inline]
    pub fn one_hop(&self, i: usize, j: usize) -> f64 {
        if i != j && self.has_edge(i, j) {
            self.one_hop_raw(i, j)
        } else {
            f64::INFINITY
        }
    }

    /// `r^I_j`.
    #[inline]
    pub fn zero_hop(&self, j: usize) -> f64 {
        self.zero_hop[j].0
    }

    pub fn zero_hop_source(&self, j: usize) -> IntraSource {
        self.zero_hop[j].1
    }

    /// Stored predictors of `j`, ascending.
    #[inline]
    pub fn predictors_of(&self, j: usize) -> &[usize] {
        &self.in_adj[j]
    }

    /// Stored targets predicted from `i`, ascending.
    pub fn targets_of(&self, i: usize) -> &[usize] {
        &self.out_adj[i]
    }

    pub fn storage(&self) -> f64 {
        self.storage
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Smallest one-hop cost over stored edges (infinite when none).
    pub fn min_one_hop(&self) -> f64 {
        self.min_one_hop
    }

    /// Smallest zero-hop cost over all MDUs.
    pub fn min_zero_hop(&self) -> f64 {
        self.zero_hop
            .iter()
            .map(|z| z.0)
            .fold(f64::INFINITY, f64::min)
    }
}
