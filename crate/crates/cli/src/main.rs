use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gradsim::dgen::{self, AccelTemplateLib, DeviceMemLib, DevicePrimLib, Libraries};
use gradsim::dopt::{
    history_csv, optimize, rank_technology_targets, AreaPenalty, DotProductScenario, ExprProblem, Objective,
    ObjectiveKind, OptimizeResult, OptimizerConfig, PipelineProblem, Problem, Status,
};
use gradsim::dsim::estimate;
use gradsim::hwmodel::HardwareModel;
use gradsim::mapper::{map_workload, MapConfig};
use gradsim::par::Execution;
use gradsim::report::{csv_line, fmt_sig};
use gradsim::sweep::{sweep, GridAxis, SweepResult};
use gradsim::workload::{generate, GeneratorKind, Workload};

#[derive(Parser)]
#[command(name = "gradsim", version, about = "Differentiable accelerator modeling, simulation and optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a hardware model from architecture and technology descriptions.
    Dgen(DgenArgs),
    /// Map a workload onto a hardware model and estimate runtime, energy, power and area.
    Dsim(DsimArgs),
    /// Gradient-descend hardware parameters toward an objective under an area budget.
    Dopt(DoptArgs),
    /// Evaluate every point of a parameter grid.
    Sweep(SweepArgs),
    /// Write a synthetic workload graph.
    GenWorkload(GenArgs),
}

#[derive(Args)]
struct DgenArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    tech: PathBuf,
    /// Memory device library (defaults to the bundled one).
    #[arg(long)]
    memlib: Option<PathBuf>,
    #[arg(long)]
    primlib: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Model file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    /// Override a parameter's value, `name=value`.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    map: MapArgs,
}

#[derive(Args)]
struct MapArgs {
    /// Serialize compute and memory phases instead of overlapping them.
    #[arg(long)]
    no_overlap: bool,
    #[arg(long)]
    no_prefetch: bool,
    /// Compute-merge threshold in operations (0 disables merging).
    #[arg(long)]
    hvth: Option<u64>,
}

impl MapArgs {
    fn config(&self) -> MapConfig {
        MapConfig {
            overlap: !self.no_overlap,
            prefetch: !self.no_prefetch,
            hvth: self.hvth,
        }
    }
}

#[derive(Args)]
struct DsimArgs {
    #[command(flatten)]
    input: ModelArgs,
    /// Per-vertex execution trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Key-value report; also printed to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-unit breakdown (CSV).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ObjectiveArgs {
    #[arg(long, default_value = "time")]
    objective: ObjectiveKind,
    /// Area budget [mm²].
    #[arg(long)]
    area_max: f64,
    /// `lagrange:<multiplier>` or `exp`.
    #[arg(long, default_value = "lagrange:0")]
    penalty: String,
}

impl ObjectiveArgs {
    fn objective(&self) -> Result<Objective> {
        let penalty = match self.penalty.split_once(':') {
            _ if self.penalty == "exp" => AreaPenalty::Exponential,
            Some(("lagrange", l)) => AreaPenalty::Lagrange(l.parse().with_context(|| format!("bad multiplier `{l}`"))?),
            _ => bail!("bad penalty `{}` (expected lagrange:<multiplier> or exp)", self.penalty),
        };
        let o = Objective {
            kind: self.objective,
            area_max: self.area_max,
            penalty,
        };
        o.validate()?;
        Ok(o)
    }
}

#[derive(Args)]
struct ProblemArgs {
    /// Built-in analytical scenario instead of a model and workload.
    #[arg(long, value_parser = ["dot"], conflicts_with_all = ["model", "workload"])]
    scenario: Option<String>,
    #[arg(long, required_unless_present = "scenario")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "scenario")]
    workload: Option<PathBuf>,
    #[arg(long = "set", value_name = "NAME=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    map: MapArgs,
}

#[derive(Args)]
struct DoptArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    /// Comma-separated parameters to optimize (default: all).
    #[arg(long, value_delimiter = ',')]
    free: Vec<String>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Learning rate (default: chosen from the first gradient).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Stop once a feasible point reaches this objective.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    no_polish: bool,
    #[arg(long)]
    sequential: bool,
    /// Epoch history (CSV).
    #[arg(long)]
    history: Option<PathBuf>,
    /// Parameters ranked by normalized sensitivity at the result (CSV).
    #[arg(long)]
    targets: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    /// Grid axis: `name=v1,v2,...`, `name=lo..hi` or `name=pow2:lo..hi`.
    #[arg(long)]
    grid: Vec<String>,
    #[arg(long)]
    sequential: bool,
    /// Result CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    kind: GeneratorKind,
    /// Number of layers, blocks or products.
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status 2: the inputs parsed as arguments but are not valid.
#[derive(Debug)]
struct Invalid(anyhow::Error);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Invalid(e.into()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

/// Write via a temporary file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("{}: cannot create", path.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| anyhow!("{}: {}", path.display(), e.error))?;
    Ok(())
}

fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<HardwareModel> {
    HardwareModel::from_text(&read(path)?).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn load_workload(path: &Path) -> Result<Workload> {
    Workload::parse(&read(path)?).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn parse_overrides(items: &[String]) -> Result<Vec<(String, f64)>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| invalid(anyhow!("override `{s}` is not NAME=VALUE")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(anyhow!("override `{s}`: `{v}` is not a number")))?;
            if !v.is_finite() {
                return Err(invalid(anyhow!("override `{s}` is not finite")));
            }
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Moves each overridden parameter's seed; names must exist and values must be in bounds.
fn apply_overrides(specs: &mut [gradsim::hwmodel::ParamSpec], items: &[String]) -> Result<()> {
    for (k, v) in parse_overrides(items)? {
        let spec = specs
            .iter_mut()
            .find(|s| s.name() == k)
            .ok_or_else(|| invalid(anyhow!("override names unknown parameter `{k}`")))?;
        if !spec.contains(v) {
            return Err(invalid(anyhow!("override {k}={v} outside [{}, {}]", spec.min, spec.max)));
        }
        spec.seed = v;
    }
    Ok(())
}

fn apply_model_overrides(h: &mut HardwareModel, items: &[String]) -> Result<()> {
    let mut specs: Vec<_> = h.params().cloned().collect();
    apply_overrides(&mut specs, items)?;
    for s in specs {
        h.add_param(s);
    }
    Ok(())
}

fn cmd_dgen(a: &DgenArgs) -> Result<()> {
    let with = |p: &Path, e: dgen::DgenError| invalid(anyhow!("{}: {e}", p.display()));
    let arch = read(&a.arch)?;
    let tech = read(&a.tech)?;
    let mut libs = Libraries::bundled();
    if let Some(p) = &a.memlib {
        libs.mem = DeviceMemLib::parse(&read(p)?).map_err(|e| with(p, e))?;
    }
    if let Some(p) = &a.primlib {
        libs.prims = DevicePrimLib::parse(&read(p)?).map_err(|e| with(p, e))?;
    }
    if let Some(p) = &a.templates {
        libs.templates = AccelTemplateLib::parse(&read(p)?).map_err(|e| with(p, e))?;
    }
    let h = dgen::generate_with(&arch, &tech, &libs).map_err(|e| match e {
        dgen::DgenError::Parse { .. } => invalid(anyhow!("{} / {}: {e}", a.arch.display(), a.tech.display())),
        other => invalid(other),
    })?;
    emit(a.out.as_deref(), &h.to_text())
}

fn cmd_dsim(a: &DsimArgs) -> Result<()> {
    let mut h = load_model(&a.input.model)?;
    apply_model_overrides(&mut h, &a.input.overrides)?;
    let w = load_workload(&a.input.workload)?;
    let c = h.specialize_at(&h.seed_assignment()).map_err(invalid)?;
    let r = map_workload(&w, &c, &a.input.map.config()).map_err(invalid)?;
    let e = estimate(&r, &c);
    let report = e.to_report();
    if let Some(p) = &a.trace {
        write_atomic(p, &r.trace_csv())?;
    }
    if let Some(p) = &a.csv {
        write_atomic(p, &e.to_csv())?;
    }
    if let Some(p) = &a.report {
        write_atomic(p, &report)?;
    }
    print!("{report}");
    Ok(())
}

enum Loaded {
    Pipeline(PipelineProblem),
    Expr(ExprProblem),
}

impl Loaded {
    fn problem(&self) -> &dyn Problem {
        match self {
            Loaded::Pipeline(p) => p,
            Loaded::Expr(p) => p,
        }
    }
}

fn load_problem(a: &ProblemArgs, free: &[String]) -> Result<Loaded> {
    if a.scenario.is_some() {
        let mut s = DotProductScenario::default();
        let mut specs = [s.b.clone(), s.p.clone()];
        apply_overrides(&mut specs, &a.overrides)?;
        [s.b, s.p] = specs;
        let mut p = s.problem();
        if !free.is_empty() {
            for f in free {
                if !p.params.iter().any(|s| s.name() == f) {
                    return Err(invalid(anyhow!("unknown parameter `{f}`")));
                }
            }
            p.params.retain(|s| free.contains(&s.name().to_string()));
        }
        return Ok(Loaded::Expr(p));
    }
    let (mp, wp) = (a.model.as_ref().expect("clap requires it"), a.workload.as_ref().expect("clap requires it"));
    let mut h = load_model(mp)?;
    apply_model_overrides(&mut h, &a.overrides)?;
    let w = load_workload(wp)?;
    let names: Vec<String> = if free.is_empty() {
        h.params().map(|p| p.name().to_string()).collect()
    } else {
        free.to_vec()
    };
    let p = PipelineProblem::with_free(h, w, a.map.config(), &names).map_err(invalid)?;
    // a seed that cannot even be mapped is an input error, not an optimizer outcome
    p.forward(&p.seed()).map_err(invalid)?;
    Ok(Loaded::Pipeline(p))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::TargetMet => "target-met",
        Status::NonConvergence => "non-convergence",
        Status::Infeasible => "infeasible",
    }
}

fn summary(r: &OptimizeResult, ranked: &[(String, f64)]) -> String {
    let p = &r.evaluation.perf;
    let mut out = String::new();
    let _ = writeln!(out, "status = {}", status_name(r.status));
    let _ = writeln!(out, "epochs = {}", r.epochs);
    let _ = writeln!(out, "feasible = {}", r.feasible);
    let _ = writeln!(out, "objective = {}", fmt_sig(r.objective));
    for (k, v, u) in [("runtime", p.runtime, "s"), ("energy", p.energy, "nJ"), ("power", p.power, "W"), ("area", p.area, "mm2")] {
        let _ = writeln!(out, "{k} = {} # {u}", fmt_sig(v));
    }
    for name in &r.params {
        let _ = writeln!(out, "param.{name} = {}", fmt_sig(r.best.get(name).unwrap_or(f64::NAN)));
    }
    for (i, (name, score)) in ranked.iter().take(5).enumerate() {
        let _ = writeln!(out, "target.{} = {name} # |g*p| = {}", i + 1, fmt_sig(*score));
    }
    out
}

fn cmd_dopt(a: &DoptArgs) -> Result<ExitCode> {
    let obj = a.objective.objective().map_err(invalid)?;
    let loaded = load_problem(&a.problem, &a.free)?;
    let problem = loaded.problem();
    let cfg = OptimizerConfig {
        alpha: a.lr,
        max_epochs: a.epochs,
        epsilon: a.epsilon,
        target: a.target,
        polish: !a.no_polish,
        exec: execution(a.sequential),
    };
    cfg.validate().map_err(invalid)?;
    let r = optimize(problem, &problem.seed(), &obj, &cfg).map_err(invalid)?;
    let g: Vec<(String, f64)> = obj.gradient(&r.evaluation).into_iter().collect();
    let ranked = rank_technology_targets(&g, &r.best);
    if let Some(p) = &a.history {
        write_atomic(p, &history_csv(&r.params, &r.history))?;
    }
    if let Some(p) = &a.targets {
        let mut csv = csv_line(["rank", "param", "score"]);
        for (i, (n, s)) in ranked.iter().enumerate() {
            csv.push_str(&csv_line([(i + 1).to_string(), n.clone(), fmt_sig(*s)]));
        }
        write_atomic(p, &csv)?;
    }
    print!("{}", summary(&r, &ranked));
    Ok(match r.status {
        Status::Converged | Status::TargetMet => ExitCode::SUCCESS,
        Status::NonConvergence | Status::Infeasible => {
            eprintln!("warning: optimizer stopped with status {}", status_name(r.status));
            ExitCode::from(3)
        }
    })
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let obj = a.objective.objective().map_err(invalid)?;
    let mut axes: Vec<GridAxis> = a
        .grid
        .iter()
        .map(|s| s.parse::<GridAxis>().map_err(invalid))
        .collect::<Result<_>>()?;
    let names: Vec<String> = axes.iter().map(|x| x.param.clone()).collect();
    let loaded = load_problem(&a.problem, &names)?;
    let problem = loaded.problem();
    if axes.is_empty() {
        if a.problem.scenario.is_none() {
            return Err(invalid(anyhow!("sweep over a model needs at least one --grid axis")));
        }
        axes = problem
            .params()
            .iter()
            .map(|s| GridAxis::from_spec(s).map_err(invalid))
            .collect::<Result<_>>()?;
    }
    let r: SweepResult = sweep(problem, &axes, &obj, execution(a.sequential)).map_err(invalid)?;
    emit(a.out.as_deref(), &r.to_csv())?;
    if a.out.is_some() {
        match r.best_row() {
            Some(b) => {
                let point: Vec<String> = r.params.iter().zip(&b.values).map(|(n, v)| format!("{n}={}", fmt_sig(*v))).collect();
                println!("best {} objective={}", point.join(" "), fmt_sig(b.objective));
            }
            None => println!("no feasible point"),
        }
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    if a.size == 0 {
        return Err(invalid(anyhow!("--size must be positive")));
    }
    emit(a.out.as_deref(), &generate(a.kind, a.size, a.seed).to_text())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Dgen(a) => cmd_dgen(a).map(|_| ExitCode::SUCCESS),
        Command::Dsim(a) => cmd_dsim(a).map(|_| ExitCode::SUCCESS),
        Command::Dopt(a) => cmd_dopt(a),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ExitCode::SUCCESS),
        Command::GenWorkload(a) => cmd_gen(a).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Invalid>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
