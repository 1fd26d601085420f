//! Acceptance suite: runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use navstream::adapters::{
    build_lf_scenario, build_viewport_scenario, lifetime_defaults, LfGridSpec, TrajectoryLog,
};
use navstream::baseline::{run_baseline, BaselineVariant};
use navstream::cost::{CompiledStructure, SizeTable};
use navstream::eval::{eval_fixed, eval_flexible, eval_infinite, BufferModel, Evaluator};
use navstream::landmark::{build_initial_structure, check_split, plan_landmarks, PlannerParams};
use navstream::merge::{merges_to, pwc_eval, select_merge_params, PwcParams};
use navstream::refine::{greedy_refine, sweep, CandidatePolicy, RefinerParams, TradeoffRow};
use navstream::scenario::{
    aggregate_switch_probabilities, validate_navigation_model, LifetimeModel, MediaGraph,
    NavigationModel, Scenario,
};
use navstream::sim::{
    enumerate_policies, simulate_sessions, unmemoized_eval, LifetimeMode, SimConfig,
};
use rand::RngExt;

use common::{random_instance, random_scenario, random_sizes, rel_close, rng};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lf_scenario(rows: usize, cols: usize, mu: f64, t_max: usize) -> (Scenario, SizeTable) {
    let (graph, nav, sizes) = build_lf_scenario(&LfGridSpec::new(rows, cols)).unwrap();
    (
        Scenario::new(graph, nav, LifetimeModel::new(mu, t_max).unwrap()).unwrap(),
        sizes,
    )
}

fn dp_correctness() -> Outcome {
    let mut slowest = Duration::ZERO;
    for seed in 0..50 {
        let (sc, sizes, st) = random_instance(1000 + seed, 8, 5);
        let t = Instant::now();
        let fixed = eval_fixed(&sc, &sizes, &st).unwrap().expected_cost;
        let flex = eval_flexible(&sc, &sizes, &st).unwrap().expected_cost;
        let oracle_fixed = unmemoized_eval(&sc, &sizes, &st, BufferModel::Fixed, false).unwrap();
        let oracle_flex = unmemoized_eval(&sc, &sizes, &st, BufferModel::Flexible, false).unwrap();
        let dt = t.elapsed();
        slowest = slowest.max(dt);
        ensure(rel_close(fixed, oracle_fixed, 1e-9), || {
            format!("seed {seed}: fixed {fixed} vs oracle {oracle_fixed}")
        })?;
        ensure(rel_close(flex, oracle_flex, 1e-9), || {
            format!("seed {seed}: flexible {flex} vs oracle {oracle_flex}")
        })?;
        ensure(dt < Duration::from_secs(1), || {
            format!("seed {seed} took {dt:?}")
        })?;
    }
    Ok(format!(
        "50 scenarios agree with the unmemoized oracle to 1e-9, slowest {slowest:?}"
    ))
}

fn dp_optimality() -> Outcome {
    let mut count = 0;
    for seed in 0..40 {
        let (sc, sizes, st) = random_instance(2000 + seed, 3, 2);
        for (buffer, dp) in [
            (
                BufferModel::Fixed,
                eval_fixed(&sc, &sizes, &st).unwrap().expected_cost,
            ),
            (
                BufferModel::Flexible,
                eval_flexible(&sc, &sizes, &st).unwrap().expected_cost,
            ),
        ] {
            let best = enumerate_policies(&sc, &sizes, &st, buffer, false).unwrap();
            ensure(dp == best, || {
                format!("seed {seed} {buffer}: dp {dp} vs enumerated optimum {best}")
            })?;
            count += 1;
        }
    }
    Ok(format!(
        "{count} evaluations equal the exhaustive policy optimum exactly"
    ))
}

fn monte_carlo() -> Outcome {
    let t = Instant::now();
    let (sc, sizes) = lf_scenario(16, 16, 3.0, 8);
    let structure = build_initial_structure(&plan_landmarks(&sc, &sizes, 0.1, 100).unwrap());
    let cs = CompiledStructure::new(&structure, &sizes).unwrap();
    let dp = Evaluator::new(BufferModel::Flexible)
        .weight_first_switch(true)
        .record_policy(true)
        .run(&sc, &cs);
    let cfg = SimConfig {
        sessions: 200_000,
        seed: 42,
        mode: LifetimeMode::Consistency,
        keep_traces: 0,
    };
    let sim = simulate_sessions(&sc, &sizes, &structure, &dp.policy, &cfg).unwrap();
    let dt = t.elapsed();
    let z = (sim.mean - dp.expected_cost) / sim.std_err;
    ensure(z.abs() <= 4.0, || {
        format!(
            "mean {} vs dp {} is {z:.2} standard errors off",
            sim.mean, dp.expected_cost
        )
    })?;
    ensure(dt < Duration::from_secs(60), || format!("took {dt:?}"))?;
    Ok(format!(
        "mean {:.4} vs dp {:.4} ({z:+.2} se, {} landmarks) in {dt:?}",
        sim.mean,
        dp.expected_cost,
        structure.landmark_count()
    ))
}

fn buffer_ordering() -> Outcome {
    for seed in 0..50 {
        let (sc, sizes, st) = random_instance(3000 + seed, 8, 5);
        let cs = CompiledStructure::new(&st, &sizes).unwrap();
        let fixed = Evaluator::new(BufferModel::Fixed).cost(&sc, &cs);
        let flex = Evaluator::new(BufferModel::Flexible).cost(&sc, &cs);
        let inf = eval_infinite(&sc, &cs, false);
        ensure(flex <= fixed * (1.0 + 1e-12), || {
            format!("seed {seed}: flexible {flex} > fixed {fixed}")
        })?;
        ensure(inf <= flex * (1.0 + 1e-12), || {
            format!("seed {seed}: unbounded {inf} > flexible {flex}")
        })?;
    }
    Ok("unbounded <= flexible <= fixed on 50 random pairs".into())
}

fn branch_and_bound() -> Outcome {
    let (mut candidates, mut pruned) = (0, 0);
    for seed in 0..20 {
        let mut r = rng(4000 + seed);
        let n = r.random_range(5..=10);
        let t_max = r.random_range(2..=4);
        let mu = r.random_range(1.0..3.0);
        let sc = random_scenario(&mut r, n, 3, mu, t_max);
        let sizes = random_sizes(&mut r, n);
        let lambda = r.random_range(0.005..0.2);
        let init = build_initial_structure(&plan_landmarks(&sc, &sizes, lambda, 100).unwrap());
        let mut params = RefinerParams::new(lambda).unwrap();
        let on = greedy_refine(&sc, &sizes, &init, &params).unwrap();
        params.enable_pruning = false;
        let off = greedy_refine(&sc, &sizes, &init, &params).unwrap();
        ensure(on.structure == off.structure, || {
            format!("seed {seed}: structures differ")
        })?;
        let trajectory = |o: &navstream::refine::RefineOutcome| {
            o.log
                .steps
                .iter()
                .map(|s| (s.edges.clone(), s.objective))
                .collect::<Vec<_>>()
        };
        ensure(trajectory(&on) == trajectory(&off), || {
            format!("seed {seed}: objective trajectories differ")
        })?;
        ensure(on.objective == off.objective, || {
            format!("seed {seed}: final objectives differ")
        })?;
        candidates += on.log.candidates;
        pruned += on.log.pruned;
    }
    let fraction = pruned as f64 / candidates as f64;
    ensure(fraction >= 0.10, || {
        format!("only {:.1}% of candidates pruned", 100.0 * fraction)
    })?;
    Ok(format!(
        "20 runs identical with and without pruning, {:.1}% of {candidates} candidates pruned",
        100.0 * fraction
    ))
}

fn tsvq_behavior() -> Outcome {
    let spec = LfGridSpec::new(30, 30);
    let (mu, t_max) = lifetime_defaults(spec.anchor_count()).unwrap();
    let (sc, sizes) = lf_scenario(30, 30, mu, t_max);
    let q = aggregate_switch_probabilities(&sc);
    let count = |lambda: f64| -> Result<usize, String> {
        let partitions = plan_landmarks(&sc, &sizes, lambda, 100).unwrap();
        let params = PlannerParams::new(lambda / mu, &q).unwrap();
        for p in &partitions {
            if let Some(check) = check_split(p, &sizes, &params).unwrap() {
                ensure(!check.beneficial(), || {
                    format!(
                        "lambda {lambda}: partition at landmark {} still splits",
                        p.landmark
                    )
                })?;
            }
        }
        Ok(partitions.len())
    };
    let (lo, hi) = (count(1.0)?, count(10.0)?);
    ensure(hi >= lo, || {
        format!("{hi} landmarks at lambda 10 < {lo} at lambda 1")
    })?;
    Ok(format!(
        "{lo} landmarks at lambda 1, {hi} at lambda 10; all partitions stable under re-check"
    ))
}

fn landmark_advantage() -> Outcome {
    let t = Instant::now();
    let (sc, sizes) = lf_scenario(16, 16, 1.5, 3);
    let lambdas = [0.01, 0.05, 0.2, 1.0];
    let mut params = RefinerParams::new(0.0).unwrap();
    params.candidate_policy = CandidatePolicy::Neighborhood;
    let lm = sweep(&sc, &sizes, &lambdas, &params).unwrap();
    let ga: Vec<TradeoffRow> = lambdas
        .iter()
        .map(|&lambda| {
            let p = RefinerParams {
                lambda,
                ..params.clone()
            };
            TradeoffRow::from_outcome(
                "flex-ga",
                lambda,
                &run_baseline(&sc, &sizes, &p, BaselineVariant::FlexGa).unwrap(),
            )
        })
        .collect();
    let dt = t.elapsed();
    let win = lm.iter().find_map(|a| {
        ga.iter()
            .find(|b| a.expected_bits <= b.expected_bits && a.storage_bits <= b.storage_bits)
            .map(|b| (a, b))
    });
    ensure(dt < Duration::from_secs(600), || {
        format!("sweep took {dt:?}")
    })?;
    let (a, b) = win.ok_or_else(|| "no landmark point dominates a flex-ga point".to_string())?;
    Ok(format!(
        "flex-lm at lambda {} ({:.3} bits, {:.0} stored) dominates flex-ga at lambda {} ({:.3} bits, {:.0} stored); sweep {dt:?}",
        a.lambda, a.expected_bits, a.storage_bits, b.lambda, b.expected_bits, b.storage_bits
    ))
}

fn merge_operator() -> Outcome {
    let mut r = rng(8000);
    for case in 0..1000 {
        let target: i64 = r.random_range(-1000..=1000);
        let k = r.random_range(1..=8);
        let values: Vec<i64> = (0..k).map(|_| target + r.random_range(-64..=64)).collect();
        let p = select_merge_params(&values, target).unwrap();
        ensure(merges_to(p, &values, target), || {
            format!("case {case}: {values:?} -> {target} not merged by {p:?}")
        })?;
        if p.w_step > 1 {
            let smaller = PwcParams::centered(p.w_step - 1, target).unwrap();
            ensure(!merges_to(smaller, &values, target), || {
                format!("case {case}: W = {} is not minimal", p.w_step)
            })?;
        }
        ensure(pwc_eval(p, target) == target as f64, || {
            format!("case {case}: target moved")
        })?;
    }
    Ok("1000 random sets merge exactly with minimal W".into())
}

fn model_invariants() -> Outcome {
    for (mu, t_max) in [(0.5, 1), (2.0, 4), (48.0, 96), (50.0, 200)] {
        let lt = LifetimeModel::new(mu, t_max).unwrap();
        for t in 0..=t_max + 2 {
            ensure(
                lt.g(t + 1) <= lt.g(t) && (0.0..=1.0).contains(&lt.g(t)),
                || format!("g not monotone at t = {t}, mu = {mu}"),
            )?;
        }
        ensure(lt.g(t_max + 1) == 0.0, || {
            format!("g(t_max + 1) != 0 for mu = {mu}")
        })?;
    }

    let mut scenarios = vec![lf_scenario(16, 16, 3.0, 8).0, lf_scenario(5, 7, 6.5, 12).0];
    let mut r = rng(9000);
    for _ in 0..10 {
        let n = r.random_range(2..=12);
        let mu = r.random_range(0.5..6.0);
        scenarios.push(random_scenario(&mut r, n, 4, mu, 8));
    }
    for sc in &scenarios {
        let q = aggregate_switch_probabilities(sc);
        let expected: f64 = (1..=sc.lifetime().horizon()).map(|t| sc.g(t)).sum();
        ensure((q.total() - expected).abs() < 1e-6, || {
            format!("q mass {} vs {expected}", q.total())
        })?;
    }

    let mut generated: Vec<(MediaGraph, NavigationModel)> = Vec::new();
    for (rows, cols) in [(4, 4), (16, 16), (30, 30)] {
        let (g, nav, _) = build_lf_scenario(&LfGridSpec::new(rows, cols)).unwrap();
        generated.push((g, nav));
    }
    let sessions = (0..300)
        .map(|_| {
            (0..r.random_range(1..20))
                .map(|_| r.random_range(0..30))
                .collect()
        })
        .collect();
    generated.push(build_viewport_scenario(&TrajectoryLog { sessions }, 30).unwrap());
    for (graph, nav) in &generated {
        let violations = validate_navigation_model(graph, nav);
        ensure(violations.is_empty(), || {
            format!("{} violations, first {}", violations.len(), violations[0])
        })?;
        let mut sums = std::collections::BTreeMap::new();
        for (&(k, i, _), &p) in &nav.p_switch {
            *sums.entry((k, i)).or_insert(0.0) += p;
        }
        ensure(sums.values().all(|s: &f64| (s - 1.0).abs() <= 1e-9), || {
            "a generated row does not sum to 1".into()
        })?;
        ensure(
            (nav.p_start.values().sum::<f64>() - 1.0).abs() <= 1e-9,
            || "start row does not sum to 1".into(),
        )?;
    }

    let coarse = build_lf_scenario(&LfGridSpec {
        quad_samples: 4,
        ..LfGridSpec::new(4, 4)
    })
    .unwrap()
    .1;
    let fine = build_lf_scenario(&LfGridSpec {
        quad_samples: 8,
        ..LfGridSpec::new(4, 4)
    })
    .unwrap()
    .1;
    let worst = coarse
        .p_switch
        .iter()
        .map(|(key, &p)| (p - fine.p_switch[key]).abs() / fine.p_switch[key])
        .fold(0.0, f64::max);
    ensure(worst < 0.01, || {
        format!("quadrature changes an entry by {:.3}%", 100.0 * worst)
    })?;
    Ok(format!(
        "lifetime, aggregate mass, row normalization hold; quadrature change {:.2e}",
        worst
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("DP correctness", dp_correctness),
        ("DP optimality witness", dp_optimality),
        ("Monte-Carlo agreement", monte_carlo),
        ("buffer ordering", buffer_ordering),
        ("branch-and-bound soundness", branch_and_bound),
        ("TSVQ behavior", tsvq_behavior),
        ("landmark advantage", landmark_advantage),
        ("merge operator", merge_operator),
        ("model invariants", model_invariants),
    ];
    // optional criterion numbers select a subset; other arguments are ignored
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (idx, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(idx + 1)) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!(
                "criterion {}: PASS {name}: {detail} [{:.1?}]",
                idx + 1,
                t.elapsed()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {}: FAIL {name}: {detail} [{:.1?}]",
                    idx + 1,
                    t.elapsed()
                );
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
