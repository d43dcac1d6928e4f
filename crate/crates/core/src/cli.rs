//! Command-line front end: `run`, `analyze`, `sweep` and `report`.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage error, 3 divergence or
//! missing convergence, 4 structural trace error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    detect_wait_states, pop_metrics_with, render_pop, render_wait_states, PhaseSelect, ReportFormat,
};
use crate::comm::CommConfig;
use crate::controller::{run, AllenCahnSetup, ExecMode, RunConfig};
use crate::error::{Error, Result};
use crate::harness::{self, BenchConfig, RunState, TableStyle};
use crate::problems::snapshot::write_snapshot;
use crate::problems::Field2D;
use crate::trace::{build_profile, read_trace, write_trace};

pub const TRACE_DIR_ENV: &str = "PITLAB_TRACE_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICS: i32 = 3;
pub const EXIT_STRUCTURAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pitlab", version, about = "Time-parallel integration lab: run, trace, analyze, benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate with PFASST and write a trace.
    Run(RunArgs),
    /// POP metrics, wait states and profiles of a trace.
    Analyze(AnalyzeArgs),
    /// Expand and execute a benchmark config.
    Sweep(SweepArgs),
    /// Result table of a previously executed benchmark.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Dahlquist,
    AllenCahn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Pretty,
    Csv,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// `key = value` file with the same keys as the long flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Collocation nodes per step.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub fine_sweeps: Option<usize>,
    #[arg(long)]
    pub coarse_sweeps: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Implicit coefficient of the Dahlquist problem.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Explicit coefficient of the Dahlquist problem.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_explicit: Option<f64>,
    /// Fine grid size of the Allen-Cahn problem.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_coarse: Option<usize>,
    #[arg(long)]
    pub lpatches: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Common circle radius instead of random radii.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Payload size in bytes above which sends wait for the receiver.
    #[arg(long)]
    pub rendezvous_threshold: Option<usize>,
    #[arg(long)]
    pub latency_ms: Option<f64>,
    #[arg(long)]
    pub slow_rank: Option<usize>,
    /// Extra milliseconds per sweep on the slow rank.
    #[arg(long)]
    pub slow_ms: Option<f64>,
    #[arg(long)]
    pub watchdog_s: Option<f64>,
    /// Trace directory; the environment variable PITLAB_TRACE_DIR overrides it.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long)]
    pub trace_name: Option<String>,
    /// Comma-separated region or phase names not to record.
    #[arg(long)]
    pub filter: Option<String>,
    /// Writes the final Allen-Cahn field of the last step.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub pop: bool,
    #[arg(long)]
    pub wait_states: bool,
    #[arg(long)]
    pub profile: bool,
    /// Use the whole trace instead of the part after the predictor.
    #[arg(long)]
    pub full: bool,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Writes `pop.<ext>` and `wait_states.<ext>` here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Print the expanded runs without executing them.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    #[arg(long)]
    pub sort: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Reads a `key = value` run config.
pub fn parse_run_config(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn take<T: FromStr>(map: &mut HashMap<String, String>, key: &str, slot: &mut Option<T>) -> Result<()> {
    if let Some(v) = map.remove(key) {
        if slot.is_none() {
            *slot = Some(v.parse().map_err(|_| usage(format!("bad value '{v}' for '{key}'")))?);
        }
    }
    Ok(())
}

fn take_enum<T: ValueEnum>(map: &mut HashMap<String, String>, key: &str, slot: &mut Option<T>) -> Result<()> {
    if let Some(v) = map.remove(key) {
        if slot.is_none() {
            *slot = Some(T::from_str(&v, true).map_err(|_| usage(format!("bad value '{v}' for '{key}'")))?);
        }
    }
    Ok(())
}

impl RunArgs {
    /// Fills unset flags from the config file.
    pub fn merge_config(&mut self, mut map: HashMap<String, String>) -> Result<()> {
        take_enum(&mut map, "problem", &mut self.problem)?;
        take(&mut map, "steps", &mut self.steps)?;
        take(&mut map, "workers", &mut self.workers)?;
        take(&mut map, "dt", &mut self.dt)?;
        take(&mut map, "nodes", &mut self.nodes)?;
        take(&mut map, "fine-sweeps", &mut self.fine_sweeps)?;
        take(&mut map, "coarse-sweeps", &mut self.coarse_sweeps)?;
        take(&mut map, "tol", &mut self.tol)?;
        take(&mut map, "max-iter", &mut self.max_iter)?;
        take_enum(&mut map, "mode", &mut self.mode)?;
        take(&mut map, "lambda", &mut self.lambda)?;
        take(&mut map, "lambda-explicit", &mut self.lambda_explicit)?;
        take(&mut map, "n", &mut self.n)?;
        take(&mut map, "n-coarse", &mut self.n_coarse)?;
        take(&mut map, "lpatches", &mut self.lpatches)?;
        take(&mut map, "eps", &mut self.eps)?;
        take(&mut map, "radius", &mut self.radius)?;
        take(&mut map, "seed", &mut self.seed)?;
        take(&mut map, "rendezvous-threshold", &mut self.rendezvous_threshold)?;
        take(&mut map, "latency-ms", &mut self.latency_ms)?;
        take(&mut map, "slow-rank", &mut self.slow_rank)?;
        take(&mut map, "slow-ms", &mut self.slow_ms)?;
        take(&mut map, "watchdog-s", &mut self.watchdog_s)?;
        take(&mut map, "trace-dir", &mut self.trace_dir)?;
        take(&mut map, "trace-name", &mut self.trace_name)?;
        take(&mut map, "filter", &mut self.filter)?;
        take(&mut map, "snapshot", &mut self.snapshot)?;
        if let Some(k) = map.keys().next() {
            return Err(usage(format!("unknown config key '{k}'")));
        }
        Ok(())
    }

    pub fn problem(&self) -> ProblemKind {
        self.problem.unwrap_or(ProblemKind::Dahlquist)
    }

    pub fn to_config(&self) -> Result<RunConfig> {
        let steps = self.steps.unwrap_or(4);
        let dt = self.dt.unwrap_or(0.1);
        let nodes = self.nodes.unwrap_or(3);
        let mut cfg = match self.problem() {
            ProblemKind::Dahlquist => RunConfig::dahlquist(
                self.lambda.unwrap_or(-1.0),
                self.lambda_explicit.unwrap_or(0.0),
                steps,
                dt,
                nodes,
            )?,
            ProblemKind::AllenCahn => {
                let d = AllenCahnSetup::default();
                let setup = AllenCahnSetup {
                    n_fine: self.n.unwrap_or(d.n_fine),
                    n_coarse: self.n_coarse.unwrap_or(d.n_coarse),
                    lpatches: self.lpatches.unwrap_or(d.lpatches),
                    eps: self.eps.unwrap_or(d.eps),
                    nodes,
                    seed: self.seed.unwrap_or(d.seed),
                    radius: self.radius,
                };
                RunConfig::allen_cahn(&setup, steps, dt)?
            }
        };
        cfg.workers = self.workers.unwrap_or(steps);
        if let Some(s) = self.fine_sweeps {
            cfg.fine.sweeps = s;
        }
        if let Some(s) = self.coarse_sweeps {
            cfg.coarse.sweeps = s;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(k) = self.max_iter {
            cfg.max_iter = k;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let mut comm = CommConfig::default();
        if let Some(t) = self.rendezvous_threshold {
            comm.rendezvous_threshold = t;
        }
        if let Some(ms) = self.latency_ms {
            comm.latency = Duration::from_secs_f64(ms.max(0.0) / 1e3);
        }
        cfg.comm = comm;
        if let Some(r) = self.slow_rank {
            cfg.slow_rank = Some((r, Duration::from_secs_f64(self.slow_ms.unwrap_or(10.0).max(0.0) / 1e3)));
        }
        if let Some(w) = self.watchdog_s {
            cfg.watchdog = Duration::from_secs_f64(w.max(0.0));
        }
        if let Some(f) = &self.filter {
            cfg.region_filter = f.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Directory for the trace: the environment variable, then the flag,
    /// then the working directory.
    pub fn trace_path(&self, cfg: &RunConfig) -> PathBuf {
        let dir = std::env::var_os(TRACE_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.trace_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        let name = self.trace_name.clone().unwrap_or_else(|| {
            let p = match self.problem() {
                ProblemKind::Dahlquist => "dahlquist",
                ProblemKind::AllenCahn => "allen-cahn",
            };
            format!("pitlab-{p}-p{}", cfg.workers)
        });
        dir.join(format!("{name}.trc.jsonl"))
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Substitution(_) => EXIT_USAGE,
        Error::Diverged { .. } | Error::NotConverged { .. } | Error::Deadlock { .. } | Error::ImplicitSolve { .. } => {
            EXIT_NUMERICS
        }
        Error::Structural(_) | Error::EmptyPhase | Error::Replay(_) | Error::Parse { .. } => EXIT_STRUCTURAL,
        _ => EXIT_FAILURE,
    }
}

fn cmd_run(mut args: RunArgs) -> Result<()> {
    if let Some(path) = args.config.clone() {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let map = parse_run_config(&text).map_err(|e| usage(e.to_string()))?;
        args.merge_config(map)?;
    }
    let cfg = args.to_config()?;
    let mode = match args.mode.unwrap_or(ModeArg::Parallel) {
        ModeArg::Serial => ExecMode::Serial,
        ModeArg::Parallel => ExecMode::Parallel,
    };
    let result = run(&cfg, mode)?;
    let path = args.trace_path(&cfg);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_trace(&result.trace, &path)?;
    eprintln!("trace written to {}", path.display());
    if let Some(snap) = &args.snapshot {
        if args.problem() != ProblemKind::AllenCahn {
            return Err(usage("snapshots are only available for allen-cahn"));
        }
        let n = args.n.unwrap_or(AllenCahnSetup::default().n_fine);
        let field = Field2D {
            n,
            length: args.lpatches.unwrap_or(1) as f64,
            values: result.final_values.last().cloned().unwrap_or_default(),
        };
        write_snapshot(&field, snap)?;
    }
    print!("{}", result.summary());
    Ok(())
}

fn emit(out: &Option<PathBuf>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let trace = read_trace(&args.trace)?;
    let all = !(args.pop || args.wait_states || args.profile);
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Text => ReportFormat::Text,
    };
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Text => "txt",
    };
    let select = if args.full {
        PhaseSelect::Full
    } else {
        PhaseSelect::AfterPredict
    };
    let mut first = true;
    let mut sep = || {
        if !std::mem::take(&mut first) && args.out.is_none() {
            println!();
        }
    };
    if args.pop || all {
        let report = pop_metrics_with(&trace, select)?;
        sep();
        emit(&args.out, &format!("pop.{ext}"), &render_pop(&report, format))?;
    }
    if args.wait_states || all {
        let w = detect_wait_states(&trace)?;
        for u in &w.unmatched {
            eprintln!("unmatched: {u}");
        }
        sep();
        emit(&args.out, &format!("wait_states.{ext}"), &render_wait_states(&w.states, format))?;
    }
    if args.profile || all {
        let prof = build_profile(&trace)?;
        let mut text = String::from("rank,region,calls,inclusive_s,exclusive_s\n");
        for (r, p) in prof.ranks.iter().enumerate() {
            for (name, s) in &p.regions {
                text.push_str(&format!("{r},{name},{},{:.9},{:.9}\n", s.calls, s.inclusive, s.exclusive));
            }
            text.push_str(&format!(
                "{r},<untracked>,0,{:.9},{:.9}\n{r},<communication>,0,{:.9},{:.9}\n",
                p.untracked, p.untracked, p.communication, p.communication
            ));
        }
        sep();
        emit(&args.out, "profile.csv", &text)?;
    }
    Ok(())
}

fn load_bench(path: &Path) -> Result<BenchConfig> {
    BenchConfig::load(path)
}

fn cmd_sweep(args: SweepArgs) -> Result<bool> {
    let mut cfg = load_bench(&args.config)?;
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if args.dry_run {
        for spec in cfg.expand()? {
            let vals: Vec<String> = spec.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("{} {}", spec.sandbox.display(), vals.join(" "));
        }
        return Ok(true);
    }
    let outcome = harness::sweep(&cfg)?;
    let failed: Vec<(usize, &String)> = outcome
        .states
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            RunState::Failed(m) => Some((i, m)),
            _ => None,
        })
        .collect();
    for (i, m) in &failed {
        eprintln!("run {i} failed: {m}");
    }
    let table = outcome.table.render(cfg.style);
    let ext = match cfg.style {
        TableStyle::Pretty => "txt",
        TableStyle::Csv => "csv",
    };
    let out = cfg.outdir().join(format!("result.{ext}"));
    std::fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
    print!("{table}");
    Ok(failed.is_empty())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut cfg = load_bench(&args.config)?;
    if let Some(s) = args.sort {
        cfg.sort = Some(s);
    }
    let style = match args.style {
        Some(StyleArg::Csv) => TableStyle::Csv,
        Some(StyleArg::Pretty) => TableStyle::Pretty,
        None => cfg.style,
    };
    let specs = cfg.expand()?;
    let table = harness::extract(&cfg, &specs)?.render(style);
    match &args.out {
        Some(p) => std::fs::write(p, &table).map_err(|e| Error::io(p, e)),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Analyze(a) => cmd_analyze(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a).map(|_| true),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
