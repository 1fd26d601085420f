use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use navstream::adapters::{
    build_lf_scenario, build_viewport_scenario, lifetime_defaults, viewport_sizes, LfGridSpec,
    TrajectoryLog, VIEWPORT_LIFETIME,
};
use navstream::baseline::{emit_tradeoff_csv, run_baseline, BaselineVariant};
use navstream::cost::{CompiledStructure, SizeTable, Structure};
use navstream::eval::{eval_infinite, BufferModel, Evaluator, Policy};
use navstream::landmark::{build_initial_structure, plan_landmarks};
use navstream::merge::{merges_to, select_merge_params};
use navstream::refine::{
    greedy_refine, greedy_subtract, sweep, AdditionMode, CandidatePolicy, RefineOutcome,
    RefinerParams, TradeoffRow,
};
use navstream::scenario::{read_scenario, write_scenario, LifetimeModel, Scenario};
use navstream::sim::{
    enumerate_policies, simulate_sessions, unmemoized_eval, LifetimeMode, SimConfig,
};
use navstream::Error;

/// Storage/transmission trade-off optimizer for navigational media streaming.
///
/// File formats:
///   scenario  JSON {"n", "start", "neighbors", "p_start": [[j,p]..], "p_switch": [[k,i,j,p]..], "lifetime": {"mu", "t_max"}}
///   sizes     CSV  kind,i,j,bits  (kind I or M with empty j; kind P for predictor i, target j)
///   structure JSON {"i_set": [..], "p_edges": [[i,j]..], "landmarks": null | [{"l", "members"}..]}
///   policy    JSON {"buffer", "weight_first_switch", "entries": [..]}
///   trade-off CSV  method,lambda,storage_bits,expected_bits,landmarks,p_edges
///
/// Set RAYON_NUM_THREADS to bound the worker thread count.
#[derive(Parser)]
#[command(name = "navstream", version, verbatim_doc_comment)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file and size table.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Expected transmission cost of a structure.
    Eval(EvalArgs),
    /// Landmark planning, writing the initial landmark structure.
    Plan(PlanArgs),
    /// Greedy structure refinement at one trade-off weight.
    Optimize(OptimizeArgs),
    /// Landmark-initialized optimization over several trade-off weights.
    Sweep(SweepArgs),
    /// Monte-Carlo sessions following an evaluator policy.
    Simulate(SimulateArgs),
    /// Merge parameters for CSV rows `target,v1,v2,...`; prints `W,c,ok`.
    MergeDemo(MergeArgs),
    /// Run a comparison method.
    Baseline(BaselineArgs),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Light-field view-area grid with a Gaussian switch model.
    Lf(GenLfArgs),
    /// 360-degree viewports estimated from a trajectory log (one session per
    /// line, space-separated viewport indices).
    Viewport(GenViewportArgs),
}

#[derive(Args)]
struct GenOutput {
    /// Scenario JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Size table CSV to write.
    #[arg(long)]
    sizes: PathBuf,
}

#[derive(Args)]
struct GenLfArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    p_unit: f64,
    #[arg(long, default_value_t = 4)]
    quad_samples: usize,
    /// Expected lifetime; defaults to half of the maximum lifetime.
    #[arg(long)]
    mu: Option<f64>,
    /// Maximum lifetime; defaults to a third of the anchor-view count.
    #[arg(long)]
    t_max: Option<usize>,
    #[command(flatten)]
    output: GenOutput,
}

#[derive(Args)]
struct GenViewportArgs {
    #[arg(long)]
    log: PathBuf,
    /// Number of viewports.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    p_unit: f64,
    #[arg(long, default_value_t = VIEWPORT_LIFETIME.0)]
    mu: f64,
    #[arg(long, default_value_t = VIEWPORT_LIFETIME.1)]
    t_max: usize,
    #[command(flatten)]
    output: GenOutput,
}

#[derive(Args)]
struct Inputs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Size table CSV.
    #[arg(long)]
    sizes: PathBuf,
}

impl Inputs {
    fn load(&self) -> anyhow::Result<(Scenario, SizeTable)> {
        let scenario = read_scenario(open(&self.scenario)?)
            .with_context(|| format!("loading {}", self.scenario.display()))?;
        let sizes = SizeTable::read_csv(open(&self.sizes)?)
            .with_context(|| format!("loading {}", self.sizes.display()))?;
        if sizes.n() != scenario.n() {
            return Err(Error::CorruptTable(format!(
                "size table covers {} MDUs, scenario has {}",
                sizes.n(),
                scenario.n()
            ))
            .into());
        }
        Ok((scenario, sizes))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalBuffer {
    Fixed,
    Flexible,
    Infinite,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefineBuffer {
    Fixed,
    Flexible,
}

impl From<RefineBuffer> for BufferModel {
    fn from(b: RefineBuffer) -> Self {
        match b {
            RefineBuffer::Fixed => BufferModel::Fixed,
            RefineBuffer::Flexible => BufferModel::Flexible,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    /// Plain recursion without a memo table.
    Unmemoized,
    /// Exhaustive search over all policies.
    Enumerate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Candidates {
    All,
    Neighborhood,
}

impl From<Candidates> for CandidatePolicy {
    fn from(c: Candidates) -> Self {
        match c {
            Candidates::All => CandidatePolicy::AllOrderedPairs,
            Candidates::Neighborhood => CandidatePolicy::Neighborhood,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Truncated,
    Consistency,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Structure JSON
    #[arg(long)]
    structure: PathBuf,
    #[arg(long, value_enum, default_value = "flexible")]
    buffer: EvalBuffer,
    /// Weight the first switch by the probability of surviving it.
    #[arg(long)]
    weight_first_switch: bool,
    /// Also report the objective `expected + lambda * storage`.
    #[arg(long)]
    lambda: Option<f64>,
    /// Write the decision table as JSON.
    #[arg(long)]
    policy_out: Option<PathBuf>,
    /// Cross-check with an independent oracle (tiny instances only).
    #[arg(long, value_enum)]
    oracle: Option<Oracle>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Trade-off weight on storage bits
    #[arg(long)]
    lambda: f64,
    /// Iteration cap for each landmark Lloyd refinement
    #[arg(long, default_value_t = 100)]
    max_lloyd_iters: usize,
    /// Landmark structure JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineOpts {
    #[arg(long, value_enum, default_value = "flexible")]
    buffer: RefineBuffer,
    #[arg(long, value_enum, default_value = "all")]
    candidates: Candidates,
    /// Disable the lower-bound pruning.
    #[arg(long)]
    no_pruning: bool,
    /// Also consider adding both directions between two MDUs in one step.
    #[arg(long)]
    pairs: bool,
    /// Weight the first switch by the probability of surviving it.
    #[arg(long)]
    weight_first_switch: bool,
}

impl RefineOpts {
    fn params(&self, lambda: f64) -> anyhow::Result<RefinerParams> {
        let mut p = RefinerParams::new(lambda)?;
        p.buffer = self.buffer.into();
        p.candidate_policy = self.candidates.into();
        p.enable_pruning = !self.no_pruning;
        p.additions = if self.pairs {
            AdditionMode::SingleOrPair
        } else {
            AdditionMode::Single
        };
        p.weight_first_switch = self.weight_first_switch;
        Ok(p)
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Trade-off weight on storage bits
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    refine: RefineOpts,
    /// Start from this structure instead of a planned landmark structure.
    #[arg(long, conflicts_with = "all_intra")]
    init: Option<PathBuf>,
    /// Start from intra-coding every MDU.
    #[arg(long)]
    all_intra: bool,
    /// Greedily remove edges after adding them.
    #[arg(long)]
    subtract: bool,
    /// Iteration cap for each landmark Lloyd refinement
    #[arg(long, default_value_t = 100)]
    max_lloyd_iters: usize,
    /// Refined structure JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Iteration log JSON to write.
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Comma-separated trade-off weights.
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    #[command(flatten)]
    refine: RefineOpts,
    /// Comparison methods to run at every weight.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    /// Trade-off CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Structure JSON
    #[arg(long)]
    structure: PathBuf,
    /// Policy JSON; computed with the evaluator when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "flexible")]
    buffer: RefineBuffer,
    /// Weight the first switch by the probability of surviving it.
    #[arg(long)]
    weight_first_switch: bool,
    #[arg(long, default_value_t = 100_000)]
    sessions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "truncated")]
    mode: Mode,
    /// Number of leading session traces to keep.
    #[arg(long, default_value_t = 0)]
    traces: usize,
    /// Kept traces as JSON lines.
    #[arg(long)]
    traces_out: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Input CSV, `-` for standard input.
    #[arg(long, default_value = "-")]
    input: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// flex-ga, fixed-ga, flex-lm-i or inf-lm.
    #[arg(long)]
    variant: String,
    /// Trade-off weight on storage bits
    #[arg(long)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "all")]
    candidates: Candidates,
    #[arg(long)]
    no_pruning: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-row trade-off CSV to write.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_structure(path: &Path, n: usize) -> anyhow::Result<Structure> {
    let s =
        Structure::read_json(open(path)?).with_context(|| format!("loading {}", path.display()))?;
    s.validate(n)?;
    Ok(s)
}

fn write_structure(path: &Path, s: &Structure) -> anyhow::Result<()> {
    let mut w = create(path)?;
    s.write_json(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_generated(
    scenario: &Scenario,
    sizes: &SizeTable,
    output: &GenOutput,
) -> anyhow::Result<()> {
    let mut w = create(&output.out)?;
    write_scenario(scenario, &mut w)?;
    w.flush()?;
    let mut w = create(&output.sizes)?;
    sizes.write_csv(&mut w)?;
    w.flush()?;
    print_json(
        &json!({ "mdus": scenario.n(), "start": scenario.start(), "mu": scenario.lifetime().mu(), "t_max": scenario.t_max() }),
    )
}

fn gen(cmd: GenCommand) -> anyhow::Result<()> {
    match cmd {
        GenCommand::Lf(a) => {
            let spec = LfGridSpec {
                rows: a.rows,
                cols: a.cols,
                sigma: a.sigma,
                p_unit: a.p_unit,
                quad_samples: a.quad_samples,
            };
            spec.validate()?;
            let (default_mu, default_t) = lifetime_defaults(spec.anchor_count())?;
            let t_max = a.t_max.unwrap_or(default_t);
            let mu = a.mu.unwrap_or(if a.t_max.is_some() {
                0.5 * t_max as f64
            } else {
                default_mu
            });
            let (graph, nav, sizes) = build_lf_scenario(&spec)?;
            let scenario = Scenario::new(graph, nav, LifetimeModel::new(mu, t_max)?)?;
            write_generated(&scenario, &sizes, &a.output)
        }
        GenCommand::Viewport(a) => {
            let log = TrajectoryLog::read(&a.log)
                .with_context(|| format!("loading {}", a.log.display()))?;
            let (graph, nav) = build_viewport_scenario(&log, a.n)?;
            let sizes = viewport_sizes(&graph, a.p_unit)?;
            let scenario = Scenario::new(graph, nav, LifetimeModel::new(a.mu, a.t_max)?)?;
            write_generated(&scenario, &sizes, &a.output)
        }
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (scenario, sizes) = a.inputs.load()?;
    let structure = load_structure(&a.structure, scenario.n())?;
    let cs = CompiledStructure::new(&structure, &sizes)?;
    let (model, expected, states) = match a.buffer {
        EvalBuffer::Infinite => {
            if a.policy_out.is_some() || a.oracle.is_some() {
                bail!(Error::InvalidParameter(
                    "the unbounded buffer has no policy table or oracle".into()
                ));
            }
            (
                None,
                eval_infinite(&scenario, &cs, a.weight_first_switch),
                None,
            )
        }
        EvalBuffer::Fixed | EvalBuffer::Flexible => {
            let model = if matches!(a.buffer, EvalBuffer::Fixed) {
                BufferModel::Fixed
            } else {
                BufferModel::Flexible
            };
            let r = Evaluator::new(model)
                .weight_first_switch(a.weight_first_switch)
                .record_policy(a.policy_out.is_some())
                .run(&scenario, &cs);
            if let Some(path) = &a.policy_out {
                let mut w = create(path)?;
                r.policy.write_json(&mut w)?;
                w.flush()?;
            }
            (Some(model), r.expected_cost, Some(r.stats.states))
        }
    };
    let oracle = match (a.oracle, model) {
        (Some(Oracle::Unmemoized), Some(m)) => Some(unmemoized_eval(
            &scenario,
            &sizes,
            &structure,
            m,
            a.weight_first_switch,
        )?),
        (Some(Oracle::Enumerate), Some(m)) => Some(enumerate_policies(
            &scenario,
            &sizes,
            &structure,
            m,
            a.weight_first_switch,
        )?),
        _ => None,
    };
    let storage = cs.storage();
    print_json(&json!({
        "expected_bits": expected,
        "storage_bits": storage,
        "objective": a.lambda.map(|l| expected + l * storage),
        "dp_states": states,
        "oracle_bits": oracle,
    }))
}

fn plan(a: PlanArgs) -> anyhow::Result<()> {
    let (scenario, sizes) = a.inputs.load()?;
    let partitions = plan_landmarks(&scenario, &sizes, a.lambda, a.max_lloyd_iters)?;
    let structure = build_initial_structure(&partitions);
    if let Some(path) = &a.out {
        write_structure(path, &structure)?;
    }
    let parts: Vec<_> = partitions
        .iter()
        .map(|p| json!({ "landmark": p.landmark, "members": p.members }))
        .collect();
    print_json(&json!({ "landmarks": partitions.len(), "partitions": parts }))
}

fn report(outcome: &RefineOutcome) -> serde_json::Value {
    json!({
        "expected_bits": outcome.expected_cost,
        "storage_bits": outcome.storage,
        "objective": outcome.objective,
        "landmarks": outcome.structure.landmark_count(),
        "p_edges": outcome.structure.p_edges.len(),
        "steps": outcome.log.steps.len(),
        "pruned_fraction": outcome.log.pruned_fraction,
    })
}

fn optimize(a: OptimizeArgs) -> anyhow::Result<()> {
    let (scenario, sizes) = a.inputs.load()?;
    let params = a.refine.params(a.lambda)?;
    let initial = if let Some(path) = &a.init {
        load_structure(path, scenario.n())?
    } else if a.all_intra {
        Structure::all_intra(scenario.n())
    } else {
        build_initial_structure(&plan_landmarks(
            &scenario,
            &sizes,
            a.lambda,
            a.max_lloyd_iters,
        )?)
    };
    let mut outcome = greedy_refine(&scenario, &sizes, &initial, &params)?;
    if a.subtract {
        let added = outcome.log.clone();
        outcome = greedy_subtract(&scenario, &sizes, &outcome.structure, &params)?;
        outcome.log.steps.splice(0..0, added.steps);
        outcome.log.initial_objective = added.initial_objective;
        outcome.log.pruned_fraction = added.pruned_fraction;
    }
    if let Some(path) = &a.out {
        write_structure(path, &outcome.structure)?;
    }
    if let Some(path) = &a.log_out {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &outcome.log)?;
        w.flush()?;
    }
    print_json(&report(&outcome))
}

fn sweep_cmd(a: SweepArgs) -> anyhow::Result<()> {
    let (scenario, sizes) = a.inputs.load()?;
    let variants = a
        .baselines
        .iter()
        .map(|v| v.parse::<BaselineVariant>())
        .collect::<Result<Vec<_>, _>>()?;
    let params = a.refine.params(0.0)?;
    let mut rows = sweep(&scenario, &sizes, &a.lambdas, &params)?;
    for v in variants {
        for &lambda in &a.lambdas {
            let p = RefinerParams {
                lambda,
                ..params.clone()
            };
            let out = run_baseline(&scenario, &sizes, &p, v)?;
            rows.push(TradeoffRow::from_outcome(v.name(), lambda, &out));
        }
    }
    let mut w = create(&a.out)?;
    emit_tradeoff_csv(&rows, &mut w)?;
    w.flush()?;
    print_json(&json!({ "rows": rows.len(), "out": a.out }))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let (scenario, sizes) = a.inputs.load()?;
    let structure = load_structure(&a.structure, scenario.n())?;
    let cs = CompiledStructure::new(&structure, &sizes)?;
    let (policy, dp) = match &a.policy {
        Some(path) => (
            Policy::read_json(open(path)?)
                .with_context(|| format!("loading {}", path.display()))?,
            None,
        ),
        None => {
            let r = Evaluator::new(a.buffer.into())
                .weight_first_switch(a.weight_first_switch)
                .record_policy(true)
                .run(&scenario, &cs);
            (r.policy, Some(r.expected_cost))
        }
    };
    let config = SimConfig {
        sessions: a.sessions,
        seed: a.seed,
        mode: match a.mode {
            Mode::Truncated => LifetimeMode::Truncated,
            Mode::Consistency => LifetimeMode::Consistency,
        },
        keep_traces: a.traces,
    };
    let summary = simulate_sessions(&scenario, &sizes, &structure, &policy, &config)?;
    if let Some(path) = &a.traces_out {
        let mut w = create(path)?;
        for t in &summary.traces {
            serde_json::to_writer(&mut w, t)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    print_json(&json!({
        "mean_bits": summary.mean,
        "std_err": summary.std_err,
        "sessions": summary.sessions,
        "dp_bits": dp,
    }))
}

fn merge_demo(a: MergeArgs) -> anyhow::Result<()> {
    let reader: Box<dyn BufRead> = if a.input.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(open(&a.input)?)
    };
    let mut out = io::stdout().lock();
    writeln!(out, "W,c,ok")?;
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums = line
            .split(',')
            .map(|f| f.trim().parse::<i64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", no + 1)))?;
        let Some((&target, values)) = nums.split_first() else {
            continue;
        };
        if values.is_empty() {
            bail!(Error::Format(format!(
                "line {}: expected target followed by at least one value",
                no + 1
            )));
        }
        let p = select_merge_params(values, target)?;
        writeln!(
            out,
            "{},{},{}",
            p.w_step,
            p.shift,
            merges_to(p, values, target)
        )?;
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> anyhow::Result<()> {
    let variant: BaselineVariant = a.variant.parse()?;
    let (scenario, sizes) = a.inputs.load()?;
    let mut params = RefinerParams::new(a.lambda)?;
    params.candidate_policy = a.candidates.into();
    params.enable_pruning = !a.no_pruning;
    let outcome = run_baseline(&scenario, &sizes, &params, variant)?;
    if let Some(path) = &a.out {
        write_structure(path, &outcome.structure)?;
    }
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        emit_tradeoff_csv(
            &[TradeoffRow::from_outcome(
                variant.name(),
                a.lambda,
                &outcome,
            )],
            &mut w,
        )?;
        w.flush()?;
    }
    print_json(&report(&outcome))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Infeasible(_)) => 3,
        Some(Error::OracleRefused(_)) => 4,
        Some(_) => 2,
        None if err.chain().any(|e| {
            e.downcast_ref::<io::Error>().is_some()
                || e.downcast_ref::<serde_json::Error>().is_some()
        }) =>
        {
            2
        }
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Gen(c) => gen(c),
        Command::Eval(a) => eval(a),
        Command::Plan(a) => plan(a),
        Command::Optimize(a) => optimize(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::MergeDemo(a) => merge_demo(a),
        Command::Baseline(a) => baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
