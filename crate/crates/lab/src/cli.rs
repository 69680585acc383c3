//! Command-line surface.
//!
//! Parsing and validation finish before any computation starts. Exit codes:
//! 0 success, 1 computation failure (including a counterexample run whose
//! certificates do not all pass), 2 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hkdyn_core::continuum::{continuum_step_with, default_tolerance, Profile, StepOptions};
use hkdyn_core::counterexample::{run_counterexample, CounterexampleOptions, DoubleSParams};
use hkdyn_core::discrete::{is_stable, make_equidistant, run_to_equilibrium, OpinionConfig};
use hkdyn_core::experiments::{final_clusters, sample_uniform, trial_stream, ExperimentKind, ExperimentSpec};
use hkdyn_core::numerics::rational::parse_rational;
use hkdyn_core::{Backend, BigFloat, PrecisionPolicy, Real};
use num_rational::BigRational;

use crate::io::{
    cluster_report, parse_profile_json, profile_json, write_certificates, write_eqtime_csv, write_linear_csv,
    write_profile_csv, write_results_csv, write_trajectory_csv, Metadata,
};
use crate::parallel;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Help, version, or a parse error rendered by clap.
    #[error("{0}")]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hkdyn", version, about = "Hegselmann-Krause bounded-confidence dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Top,
}

#[derive(Debug, Subcommand)]
enum Top {
    /// Finitely many agents.
    #[command(subcommand)]
    Discrete(DiscreteCmd),
    /// Piecewise-linear continuum profiles.
    #[command(subcommand)]
    Continuum(ContinuumCmd),
    /// The double-S profile and its per-step certificates.
    #[command(subcommand)]
    Counterexample(CounterexampleCmd),
    /// Monte Carlo estimates and scaling scans.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Debug, Subcommand)]
enum DiscreteCmd {
    /// Run to equilibrium, writing the trajectory and the cluster report.
    Run(DiscreteRunArgs),
    /// Run to equilibrium and write only the cluster report.
    Equilibrium(DiscreteArgs),
}

#[derive(Debug, Subcommand)]
enum ContinuumCmd {
    /// Apply the continuum update repeatedly.
    Run(ContinuumArgs),
}

#[derive(Debug, Subcommand)]
enum CounterexampleCmd {
    /// Evolve the double-S profile and certify every step.
    Run(CounterexampleArgs),
}

#[derive(Debug, Subcommand)]
enum ExperimentCmd {
    /// Probability that uniform opinions on [0, L] reach consensus.
    ConsensusProb(ProbArgs),
    /// Probability that the equilibrium is stable.
    StabilityProb(ProbArgs),
    /// Equilibration time of the equally spaced state (1, …, N).
    Eqtime(EqtimeArgs),
    /// Verdicts for the linear profile x(α) = Rα.
    LinearCritical(LinearArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    F64,
    Bigfloat,
}

#[derive(Debug, Args)]
struct ModeArgs {
    /// Arithmetic backend.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Mantissa bits in bigfloat mode.
    #[arg(long, default_value_t = 512)]
    precision: u32,
    /// Comparison tolerance of the precision policy.
    #[arg(long)]
    tol: Option<f64>,
}

impl ModeArgs {
    fn policy(&self, default: Mode) -> Result<PrecisionPolicy, CliError> {
        let mut p = match self.mode.unwrap_or(default) {
            Mode::Exact => PrecisionPolicy::exact(),
            Mode::F64 => PrecisionPolicy::double(),
            Mode::Bigfloat => PrecisionPolicy::bigfloat(self.precision),
        };
        if let Some(t) = self.tol {
            p = p.with_tolerance(t);
        }
        p.validate().map_err(|e| usage(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Comma-separated opinions (decimals or p/q).
    #[arg(long, group = "source", value_delimiter = ',', allow_hyphen_values = true)]
    agents: Option<Vec<String>>,
    /// File of opinions separated by commas or whitespace.
    #[arg(long, group = "source")]
    agents_file: Option<PathBuf>,
    /// The equally spaced state (1, …, N).
    #[arg(long, group = "source")]
    equidistant: Option<usize>,
    /// N uniform opinions on [0, --length], drawn from --seed.
    #[arg(long, group = "source", requires = "length")]
    uniform: Option<usize>,
    #[arg(long)]
    length: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DiscreteArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Step limit; defaults to 10N + 100.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Cluster report path (stdout when absent).
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiscreteRunArgs {
    #[command(flatten)]
    common: DiscreteArgs,
    /// Trajectory CSV path.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
#[group(id = "initial", required = true, multiple = false)]
struct ContinuumSource {
    /// Start from x(α) = Rα on [0, 1].
    #[arg(long, group = "initial")]
    linear: Option<String>,
    /// Start from a profile JSON file.
    #[arg(long, group = "initial")]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ContinuumArgs {
    #[command(flatten)]
    source: ContinuumSource,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    /// Step tolerance relative to the current range.
    #[arg(long)]
    step_tol: Option<f64>,
    /// Keep every refined breakpoint.
    #[arg(long)]
    no_coarsen: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Final profile path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving the profile of every step.
    #[arg(long)]
    trajectory_dir: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    #[arg(long, allow_hyphen_values = true)]
    epsilon: String,
    #[arg(long, default_value = "3/2", allow_hyphen_values = true)]
    d: String,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    #[command(flatten)]
    mode: ModeArgs,
    /// Step tolerance relative to the range.
    #[arg(long)]
    step_tol: Option<f64>,
    /// Certificate JSON lines path (stdout when absent).
    #[arg(long)]
    certificates: Option<PathBuf>,
    /// Directory receiving the profile CSV of every step.
    #[arg(long)]
    profiles_dir: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Comma-separated interval lengths.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6,7", allow_hyphen_values = true)]
    l: Vec<String>,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Step limit per trial; defaults to 10N + 100.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EqtimeArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LinearArgs {
    #[arg(long, value_delimiter = ',', default_value = "2.5,3,4,5,6,7", allow_hyphen_values = true)]
    ranges: Vec<String>,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    /// Step tolerance relative to the current range.
    #[arg(long, default_value_t = 1e-9)]
    step_tol: f64,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

/// Where the initial opinions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSource {
    List(Vec<BigRational>),
    Equidistant(usize),
    Uniform { n: usize, length: BigRational, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCommand {
    pub source: AgentSource,
    pub max_steps: Option<usize>,
    pub trajectory: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContinuumStart {
    Linear(BigRational),
    /// Breakpoints and values as read from a profile file.
    Profile(Vec<BigRational>, Vec<BigRational>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumCommand {
    pub start: ContinuumStart,
    pub steps: usize,
    pub step_tol: Option<f64>,
    pub coarsen: bool,
    pub json: bool,
    pub out: Option<PathBuf>,
    pub trajectory_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleCommand {
    pub epsilon: BigRational,
    pub d: BigRational,
    pub steps: usize,
    pub step_tol: Option<f64>,
    pub certificates: Option<PathBuf>,
    pub profiles_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbCommand {
    pub kind: ExperimentKind,
    pub n: usize,
    pub ls: Vec<BigRational>,
    pub trials: usize,
    pub seed: u64,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    DiscreteRun(DiscreteCommand),
    DiscreteEquilibrium(DiscreteCommand),
    ContinuumRun(ContinuumCommand),
    CounterexampleRun(CounterexampleCommand),
    Probability(ProbCommand),
    Eqtime { ns: Vec<usize>, out: Option<PathBuf> },
    LinearCritical { ranges: Vec<BigRational>, horizon: usize, step_tol: f64, out: Option<PathBuf> },
}

/// A fully validated command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub action: Action,
    pub policy: PrecisionPolicy,
    pub threads: Option<usize>,
    pub metadata: Option<PathBuf>,
    pub argv: Vec<String>,
}

fn number(text: &str, what: &str) -> Result<BigRational, CliError> {
    parse_rational(text).map_err(|_| usage(format!("malformed number for {what}: `{text}`")))
}

fn positive(text: &str, what: &str) -> Result<BigRational, CliError> {
    let v = number(text, what)?;
    if v <= BigRational::from_integer(0.into()) {
        return Err(usage(format!("{what} must be positive, got {text}")));
    }
    Ok(v)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn source_of(args: &SourceArgs) -> Result<AgentSource, CliError> {
    let list = |items: Vec<&str>| -> Result<AgentSource, CliError> {
        let xs = items
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| number(s, "an opinion"))
            .collect::<Result<Vec<_>, _>>()?;
        if xs.is_empty() {
            return Err(usage("no opinions given"));
        }
        Ok(AgentSource::List(xs))
    };
    if let Some(xs) = &args.agents {
        return list(xs.iter().map(|s| s.trim()).collect());
    }
    if let Some(path) = &args.agents_file {
        let text = read_text(path)?;
        return list(text.split(|c: char| c == ',' || c.is_whitespace()).collect());
    }
    if let Some(n) = args.equidistant {
        if n == 0 {
            return Err(usage("--equidistant needs N >= 1"));
        }
        return Ok(AgentSource::Equidistant(n));
    }
    let n = args.uniform.expect("clap enforces one source");
    if n == 0 {
        return Err(usage("--uniform needs N >= 1"));
    }
    let length = positive(args.length.as_deref().expect("clap enforces --length"), "--length")?;
    Ok(AgentSource::Uniform { n, length, seed: args.seed })
}

fn discrete_command(args: &DiscreteArgs, trajectory: Option<PathBuf>) -> Result<DiscreteCommand, CliError> {
    Ok(DiscreteCommand {
        source: source_of(&args.source)?,
        max_steps: args.max_steps,
        trajectory,
        clusters: args.clusters.clone(),
    })
}

fn relative_tol(t: Option<f64>) -> Result<Option<f64>, CliError> {
    match t {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(usage("--step-tol must be positive")),
        _ => Ok(t),
    }
}

fn threads(t: Option<usize>) -> Result<Option<usize>, CliError> {
    match t {
        Some(0) => Err(usage("--threads must be at least 1")),
        _ => Ok(t),
    }
}

/// Parses and validates `argv` (program name first).
pub fn parse_command<I, S>(argv: I) -> Result<Command, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let text: Vec<String> = argv.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    let cli = Cli::try_parse_from(&argv)?;
    let q = |s: &str| parse_rational(s).expect("literal");

    let (action, policy, threads, metadata) = match cli.command {
        Top::Discrete(DiscreteCmd::Run(a)) => {
            let cmd = discrete_command(&a.common, a.trajectory.clone())?;
            (Action::DiscreteRun(cmd), a.common.mode.policy(Mode::Exact)?, None, a.common.metadata)
        }
        Top::Discrete(DiscreteCmd::Equilibrium(a)) => {
            let cmd = discrete_command(&a, None)?;
            (Action::DiscreteEquilibrium(cmd), a.mode.policy(Mode::Exact)?, None, a.metadata)
        }
        Top::Continuum(ContinuumCmd::Run(a)) => {
            let start = if let Some(r) = &a.source.linear {
                ContinuumStart::Linear(positive(r, "--linear")?)
            } else {
                let path = a.source.profile.as_ref().expect("clap enforces one start");
                let p = parse_profile_json::<BigRational>(&read_text(path)?, &())
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?;
                ContinuumStart::Profile(p.breakpoints().to_vec(), p.values().to_vec())
            };
            let cmd = ContinuumCommand {
                start,
                steps: a.steps,
                step_tol: relative_tol(a.step_tol)?,
                coarsen: !a.no_coarsen,
                json: a.format == Format::Json,
                out: a.out,
                trajectory_dir: a.trajectory_dir,
            };
            (Action::ContinuumRun(cmd), a.mode.policy(Mode::F64)?, None, a.metadata)
        }
        Top::Counterexample(CounterexampleCmd::Run(a)) => {
            let epsilon = positive(&a.epsilon, "--epsilon")?;
            if epsilon > q("1/4") {
                return Err(usage(format!("--epsilon must be at most 1/4, got {}", a.epsilon)));
            }
            let d = number(&a.d, "--d")?;
            if d <= q("1") || d >= q("2") {
                return Err(usage(format!("--d must lie strictly between 1 and 2, got {}", a.d)));
            }
            if a.steps == 0 {
                return Err(usage("--steps must be at least 1"));
            }
            let cmd = CounterexampleCommand {
                epsilon,
                d,
                steps: a.steps,
                step_tol: relative_tol(a.step_tol)?,
                certificates: a.certificates,
                profiles_dir: a.profiles_dir,
            };
            (Action::CounterexampleRun(cmd), a.mode.policy(Mode::Bigfloat)?, None, a.metadata)
        }
        Top::Experiment(ExperimentCmd::ConsensusProb(a)) => prob(a, ExperimentKind::ConsensusProb)?,
        Top::Experiment(ExperimentCmd::StabilityProb(a)) => prob(a, ExperimentKind::StabilityProb)?,
        Top::Experiment(ExperimentCmd::Eqtime(a)) => {
            if let Some(&n) = a.n.iter().find(|&&n| n < 2) {
                return Err(usage(format!("--n entries must be at least 2, got {n}")));
            }
            let policy = a.mode.policy(Mode::F64)?;
            (Action::Eqtime { ns: a.n, out: a.out }, policy, threads(a.threads)?, a.metadata)
        }
        Top::Experiment(ExperimentCmd::LinearCritical(a)) => {
            let ranges = a.ranges.iter().map(|r| positive(r, "--ranges")).collect::<Result<Vec<_>, _>>()?;
            let step_tol = relative_tol(Some(a.step_tol))?.expect("given");
            let policy = a.mode.policy(Mode::F64)?;
            let action = Action::LinearCritical { ranges, horizon: a.horizon, step_tol, out: a.out };
            (action, policy, threads(a.threads)?, a.metadata)
        }
    };
    Ok(Command { action, policy, threads, metadata, argv: text })
}

type Parsed = (Action, PrecisionPolicy, Option<usize>, Option<PathBuf>);

fn prob(a: ProbArgs, kind: ExperimentKind) -> Result<Parsed, CliError> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let ls = a.l.iter().map(|l| positive(l, "--l")).collect::<Result<Vec<_>, _>>()?;
    let policy = a.mode.policy(Mode::F64)?;
    let cmd = ProbCommand { kind, n: a.n, ls, trials: a.trials, seed: a.seed, horizon: a.horizon, out: a.out };
    Ok((Action::Probability(cmd), policy, threads(a.threads)?, a.metadata))
}

/// Opens `path`, or stdout when absent, and hands a buffered writer to `f`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let result = match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| run_err(format!("cannot create {}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            f(&mut w).and_then(|_| w.flush())
        }
    };
    result.map_err(|e| run_err(format!("write failed: {e}")))
}

fn write_json(path: Option<&Path>, v: &serde_json::Value) -> Result<(), CliError> {
    with_output(path, |w| writeln!(w, "{v}"))
}

fn convert<T: Real>(xs: &[BigRational], ctx: &T::Context) -> Vec<T> {
    xs.iter().map(|x| T::from_rational(x, ctx)).collect()
}

fn exec_discrete<T: Real>(cmd: &DiscreteCommand, ctx: &T::Context) -> Result<(), CliError> {
    let config: OpinionConfig<T> = match &cmd.source {
        AgentSource::List(xs) => OpinionConfig::from_unsorted(convert(xs, ctx)).map_err(run_err)?,
        AgentSource::Equidistant(n) => make_equidistant(*n, ctx).map_err(run_err)?,
        AgentSource::Uniform { n, length, seed } => {
            let l = T::from_rational(length, ctx);
            sample_uniform(*n, &l, &mut trial_stream(*seed, 0)).map_err(run_err)?
        }
    };
    let max_steps = cmd.max_steps.unwrap_or_else(|| hkdyn_core::discrete::default_max_steps(config.len()));
    let run = run_to_equilibrium(config, max_steps, cmd.trajectory.is_some());
    if let Some(path) = &cmd.trajectory {
        let trajectory = run.trajectory.as_deref().unwrap_or(&[]);
        with_output(Some(path), |w| write_trajectory_csv(w, trajectory))?;
    }
    let clusters = final_clusters(&run.final_config);
    let stable = run.reached_equilibrium && is_stable(&clusters);
    write_json(cmd.clusters.as_deref(), &cluster_report(&clusters, stable, run.steps))?;
    if !run.reached_equilibrium {
        return Err(run_err(format!("no equilibrium within {max_steps} steps")));
    }
    Ok(())
}

fn write_profile(path: Option<&Path>, profile: &Profile<impl Real>, json: bool) -> Result<(), CliError> {
    if json {
        write_json(path, &profile_json(profile))
    } else {
        with_output(path, |w| write_profile_csv(w, profile))
    }
}

fn step_file(dir: &Path, t: usize, ext: &str) -> PathBuf {
    dir.join(format!("profile_{t:04}.{ext}"))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| run_err(format!("cannot create {}: {e}", dir.display())))
}

fn exec_continuum<T: Real>(cmd: &ContinuumCommand, ctx: &T::Context) -> Result<(), CliError> {
    let zero = T::from_int(0, ctx);
    let one = T::from_int(1, ctx);
    let mut profile = match &cmd.start {
        ContinuumStart::Linear(r) => Profile::linear(zero.clone(), one, zero, T::from_rational(r, ctx)),
        ContinuumStart::Profile(a, v) => Profile::new(convert(a, ctx), convert(v, ctx)),
    }
    .map_err(run_err)?;
    let ext = if cmd.json { "json" } else { "csv" };
    if let Some(dir) = &cmd.trajectory_dir {
        ensure_dir(dir)?;
        write_profile(Some(&step_file(dir, 0, ext)), &profile, cmd.json)?;
    }
    for t in 1..=cmd.steps {
        let tol = match cmd.step_tol {
            Some(rel) => profile.range() * T::from_f64(rel, ctx),
            None => default_tolerance(&profile),
        };
        if tol.is_zero() {
            // constant profile: the update is the identity
            continue;
        }
        let opts = StepOptions { coarsen: cmd.coarsen, ..StepOptions::new(tol) };
        profile = continuum_step_with(&profile, &opts).map_err(run_err)?;
        if let Some(dir) = &cmd.trajectory_dir {
            write_profile(Some(&step_file(dir, t, ext)), &profile, cmd.json)?;
        }
    }
    write_profile(cmd.out.as_deref(), &profile, cmd.json)
}

fn exec_counterexample<T: Real>(cmd: &CounterexampleCommand, ctx: &T::Context) -> Result<(), CliError> {
    let params = DoubleSParams::<T>::from_rationals(&cmd.epsilon, &cmd.d, ctx).map_err(|e| usage(e.to_string()))?;
    let opts = CounterexampleOptions { tol: None, keep_profiles: cmd.profiles_dir.is_some(), ..Default::default() };
    let opts = match cmd.step_tol {
        Some(rel) => {
            let range = hkdyn_core::counterexample::build_double_s(&params).range();
            CounterexampleOptions { tol: Some(range * T::from_f64(rel, ctx)), ..opts }
        }
        None => opts,
    };
    let run = run_counterexample(&params, cmd.steps, &opts).map_err(run_err)?;
    with_output(cmd.certificates.as_deref(), |w| write_certificates(w, &run.certificates))?;
    if let (Some(dir), Some(profiles)) = (&cmd.profiles_dir, &run.profiles) {
        ensure_dir(dir)?;
        for (t, p) in profiles.iter().enumerate() {
            write_profile(Some(&step_file(dir, t, "csv")), p, false)?;
        }
    }
    eprintln!("passed: {}, certified: {}, limit mean bound holds: {}", run.passed(), run.certified(), run.limit_mean.1);
    if !run.passed() {
        return Err(run_err("a certificate failed"));
    }
    Ok(())
}

fn exec_prob<T: Real>(cmd: &ProbCommand, ctx: &T::Context) -> Result<(), CliError> {
    let mut spec = ExperimentSpec::new(cmd.kind, cmd.n, convert::<T>(&cmd.ls, ctx), cmd.trials, cmd.seed);
    if let Some(h) = cmd.horizon {
        spec.horizon = h;
    }
    let rows = parallel::estimate(&spec).map_err(run_err)?;
    for r in rows.iter().filter(|r| r.undecided > 0) {
        eprintln!("L = {}: {} of {} trials hit the horizon", r.l, r.undecided, r.trials);
    }
    with_output(cmd.out.as_deref(), |w| write_results_csv(w, cmd.kind, &rows))
}

fn exec_eqtime<T: Real>(ns: &[usize], out: Option<&Path>, ctx: &T::Context) -> Result<(), CliError> {
    let rows = parallel::equilibration_scan::<T>(ns, ctx).map_err(run_err)?;
    with_output(out, |w| write_eqtime_csv(w, &rows))?;
    let missed: Vec<usize> = rows.iter().filter(|r| !r.reached_equilibrium).map(|r| r.n).collect();
    if !missed.is_empty() {
        return Err(run_err(format!("no equilibrium within the step limit for N = {missed:?}")));
    }
    Ok(())
}

fn exec_linear<T: Real>(
    ranges: &[BigRational],
    horizon: usize,
    step_tol: f64,
    out: Option<&Path>,
    ctx: &T::Context,
) -> Result<(), CliError> {
    let ranges: Vec<T> = convert(ranges, ctx);
    let verdicts = parallel::linear_critical_scan(&ranges, horizon, &T::from_f64(step_tol, ctx)).map_err(run_err)?;
    with_output(out, |w| write_linear_csv(w, &ranges, &verdicts))
}

macro_rules! dispatch {
    ($policy:expr, $f:ident ( $($arg:expr),* )) => {
        match $policy.backend {
            Backend::Exact => $f::<BigRational>($($arg,)* &()),
            Backend::Double => $f::<f64>($($arg,)* &()),
            Backend::BigFloat => $f::<BigFloat>($($arg,)* &$policy.precision_bits),
        }
    };
}

/// Runs a validated command.
pub fn execute(cmd: &Command) -> Result<(), CliError> {
    if let Some(path) = &cmd.metadata {
        let seed = match &cmd.action {
            Action::Probability(p) => Some(p.seed),
            Action::DiscreteRun(d) | Action::DiscreteEquilibrium(d) => match d.source {
                AgentSource::Uniform { seed, .. } => Some(seed),
                _ => None,
            },
            _ => None,
        };
        let meta = Metadata {
            command: cmd.argv.clone(),
            seed,
            policy: cmd.policy,
            symmetrization: matches!(cmd.action, Action::CounterexampleRun(_)),
            coarsening: match &cmd.action {
                Action::ContinuumRun(c) => c.coarsen,
                Action::CounterexampleRun(_) | Action::LinearCritical { .. } => true,
                _ => false,
            },
        };
        write_json(Some(path), &meta.to_json())?;
    }
    let body = || match &cmd.action {
        Action::DiscreteRun(c) | Action::DiscreteEquilibrium(c) => dispatch!(cmd.policy, exec_discrete(c)),
        Action::ContinuumRun(c) => dispatch!(cmd.policy, exec_continuum(c)),
        Action::CounterexampleRun(c) => dispatch!(cmd.policy, exec_counterexample(c)),
        Action::Probability(c) => dispatch!(cmd.policy, exec_prob(c)),
        Action::Eqtime { ns, out } => dispatch!(cmd.policy, exec_eqtime(ns, out.as_deref())),
        Action::LinearCritical { ranges, horizon, step_tol, out } => {
            dispatch!(cmd.policy, exec_linear(ranges, *horizon, *step_tol, out.as_deref()))
        }
    };
    match cmd.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(run_err)?.install(body),
        None => body(),
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let result = parse_command(argv).and_then(|cmd| execute(&cmd));
    match result {
        Ok(()) => 0,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
