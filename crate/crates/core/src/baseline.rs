//! Comparison methods and trade-off curve serialization.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::{CompiledStructure, SizeTable, Structure};
use crate::error::{Error, Result};
use crate::eval::{eval_infinite, BufferModel};
use crate::landmark::{build_initial_structure, plan_landmarks};
use crate::refine::{
    greedy_refine, greedy_subtract, optimize_landmark, AdditionMode, RefineOutcome, RefinerParams,
    TradeoffRow,
};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineVariant {
    /// All-I start, greedy single or paired edge additions, flexible buffer.
    FlexGa,
    /// All-I start, greedy single edge additions, fixed buffer.
    FixedGa,
    /// All-I start plus landmark edges, greedy addition then subtraction.
    FlexLmI,
    /// Landmark-optimized structure costed with an unbounded buffer.
    InfLm,
}

impl BaselineVariant {
    pub const ALL: [BaselineVariant; 4] = [Self::FlexGa, Self::FixedGa, Self::FlexLmI, Self::InfLm];

    pub fn name(self) -> &'static str {
        match self {
            Self::FlexGa => "flex-ga",
            Self::FixedGa => "fixed-ga",
            Self::FlexLmI => "flex-lm-i",
            Self::InfLm => "inf-lm",
        }
    }
}

impl fmt::Display for BaselineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown baseline variant {s:?} (expected flex-ga, fixed-ga, flex-lm-i or inf-lm)")))
    }
}

/// Runs one comparison method at `params.lambda`. The buffer model and
/// addition mode of `params` are overridden per variant; candidate policy and
/// pruning are kept.
pub fn run_baseline(
    scenario: &Scenario,
    sizes: &SizeTable,
    params: &RefinerParams,
    variant: BaselineVariant,
) -> Result<RefineOutcome> {
    let n = scenario.n();
    match variant {
        BaselineVariant::FlexGa => {
            let p = RefinerParams {
                buffer: BufferModel::Flexible,
                additions: AdditionMode::SingleOrPair,
                ..params.clone()
            };
            greedy_refine(scenario, sizes, &Structure::all_intra(n), &p)
        }
        BaselineVariant::FixedGa => {
            let p = RefinerParams {
                buffer: BufferModel::Fixed,
                additions: AdditionMode::Single,
                ..params.clone()
            };
            greedy_refine(scenario, sizes, &Structure::all_intra(n), &p)
        }
        BaselineVariant::FlexLmI => {
            let p = RefinerParams {
                buffer: BufferModel::Flexible,
                additions: AdditionMode::Single,
                ..params.clone()
            };
            let partitions = plan_landmarks(scenario, sizes, p.lambda, 100)?;
            let mut init = Structure::all_intra(n);
            init.p_edges = build_initial_structure(&partitions).p_edges;
            let added = greedy_refine(scenario, sizes, &init, &p)?;
            let mut out = greedy_subtract(scenario, sizes, &added.structure, &p)?;
            out.log.steps.splice(0..0, added.log.steps);
            out.log.initial_objective = added.log.initial_objective;
            out.log.candidates += added.log.candidates;
            out.log.pruned = added.log.pruned;
            out.log.pruned_fraction = added.log.pruned_fraction;
            Ok(out)
        }
        BaselineVariant::InfLm => {
            let p = RefinerParams {
                buffer: BufferModel::Flexible,
                additions: AdditionMode::Single,
                ..params.clone()
            };
            let mut out = optimize_landmark(scenario, sizes, &p, 100)?;
            let cs = CompiledStructure::new(&out.structure, sizes)?;
            out.expected_cost = eval_infinite(scenario, &cs, p.weight_first_switch);
            out.objective = out.expected_cost
                + if p.lambda == 0.0 {
                    0.0
                } else {
                    p.lambda * out.storage
                };
            Ok(out)
        }
    }
}

/// Writes trade-off rows grouped by method, then ascending `lambda`.
pub fn emit_tradeoff_csv<W: Write>(rows: &[TradeoffRow], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no trade-off rows to write".into()));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.method.cmp(&b.method).then(a.lambda.total_cmp(&b.lambda)));
    let mut w = csv::Writer::from_writer(out);
    for r in &sorted {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tradeoff_csv<R: Read>(input: R) -> Result<Vec<TradeoffRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Evaluator;
    use crate::scenario::{LifetimeModel, MediaGraph, NavigationModel};

    fn triangle() -> (Scenario, SizeTable) {
        let graph = MediaGraph::new(3, 0, vec![vec![1, 2], vec![0, 2], vec![0, 1]]).unwrap();
        let mut nav = NavigationModel {
            p_start: [(1, 0.5), (2, 0.5)].into(),
            ..Default::default()
        };
        for k in 0..3 {
            for i in (0..3).filter(|&i| i != k) {
                for j in (0..3).filter(|&j| j != i) {
                    nav.p_switch.insert((k, i, j), 0.5);
                }
            }
        }
        let sc = Scenario::new(graph, nav, LifetimeModel::new(2.0, 3).unwrap()).unwrap();
        (
            sc,
            SizeTable::synthetic(3, 1.0, |i, j| i.abs_diff(j) as f64).unwrap(),
        )
    }

    #[test]
    fn variant_names_round_trip() {
        for v in BaselineVariant::ALL {
            assert_eq!(v.name().parse::<BaselineVariant>().unwrap(), v);
        }
        assert!("flex-xx".parse::<BaselineVariant>().is_err());
    }

    #[test]
    fn single_mdu_stays_intra() {
        let graph = MediaGraph::new(1, 0, vec![vec![]]).unwrap();
        let sc = Scenario::new(
            graph,
            NavigationModel::default(),
            LifetimeModel::new(1.0, 2).unwrap(),
        )
        .unwrap();
        let sizes = SizeTable::synthetic(1, 2.0, |_, _| 1.0).unwrap();
        let out = run_baseline(
            &sc,
            &sizes,
            &RefinerParams::new(0.1).unwrap(),
            BaselineVariant::FlexGa,
        )
        .unwrap();
        assert_eq!(out.structure, Structure::all_intra(1));
        assert_eq!(out.expected_cost, 22.0);
    }

    #[test]
    fn unbounded_buffer_is_cheapest() {
        let (sc, sizes) = triangle();
        let params = RefinerParams::new(0.05).unwrap();
        let inf = run_baseline(&sc, &sizes, &params, BaselineVariant::InfLm).unwrap();
        let cs = CompiledStructure::new(&inf.structure, &sizes).unwrap();
        let flex = Evaluator::new(BufferModel::Flexible).cost(&sc, &cs);
        assert!(inf.expected_cost <= flex + 1e-9);
        for v in BaselineVariant::ALL {
            let out = run_baseline(&sc, &sizes, &params, v).unwrap();
            assert!(out.expected_cost.is_finite() && out.storage > 0.0, "{v}");
        }
    }

    #[test]
    fn csv_groups_and_round_trips() {
        let row = |m: &str, l: f64| TradeoffRow {
            method: m.into(),
            lambda: l,
            storage_bits: 0.1 + l,
            expected_bits: 1.0 / 3.0,
            landmarks: 2,
            p_edges: 7,
        };
        let rows = vec![
            row("flex-lm", 1.0),
            row("flex-ga", 0.5),
            row("flex-lm", 0.25),
            row("flex-ga", 0.125),
        ];
        let mut buf = Vec::new();
        emit_tradeoff_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,lambda,storage_bits,expected_bits,landmarks,p_edges\n"));
        let back = read_tradeoff_csv(buf.as_slice()).unwrap();
        assert_eq!(
            back,
            vec![
                row("flex-ga", 0.125),
                row("flex-ga", 0.5),
                row("flex-lm", 0.25),
                row("flex-lm", 1.0)
            ]
        );
        assert!(emit_tradeoff_csv(&[], Vec::new()).is_err());
    }
}
