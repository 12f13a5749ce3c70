//! Command-line front door for the simulator.
//!
//! `lomex run` executes a configured simulation (or replays a recorded
//! trace) with the runtime checkers attached and prints the run summary as
//! JSON on stdout; human-oriented notes go to stderr. `lomex stats`
//! recomputes the same summary from a trace file alone.
//!
//! Exit codes are a scripting contract: 0 = clean, 1 = a property violation
//! (or a replay/reduction mismatch), 2 = usage or parse error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lomex_core::reduce::verify_reduction;
use lomex_core::runner::{replay_trace, run_live, AppKind, RunOutput};
use lomex_core::scenario::{parse_mode, Scenario};
use lomex_core::scheduler::RunConfig;
use lomex_core::trace::TraceFile;

#[derive(Parser)]
#[command(name = "lomex", version, about = "Simulator for randomized local mutual exclusion on time-varying graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation, or replay a recorded trace, and print its summary.
    Run(Box<RunArgs>),
    /// Recompute a summary from a trace file alone (checker re-run).
    Stats {
        /// Trace file produced by `run --trace-out`.
        trace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Node count.
    #[arg(long)]
    nodes: Option<usize>,
    /// Port budget Δ per node.
    #[arg(long)]
    delta: Option<u8>,
    /// Priority range: draws are uniform over 0..K.
    #[arg(long)]
    k: Option<u16>,
    /// Timing model: semisync or async.
    #[arg(long)]
    mode: Option<String>,
    /// 64-bit run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Round limit (exclusive).
    #[arg(long)]
    horizon: Option<u64>,
    /// Weak-fairness forcing bound F, in rounds.
    #[arg(long)]
    fairness: Option<u64>,
    /// Longest asynchronous execution span (async mode only).
    #[arg(long)]
    max_span: Option<u64>,
    /// Per-pair connect probability per round.
    #[arg(long)]
    p_add: Option<f64>,
    /// Per-edge drop probability per round.
    #[arg(long)]
    p_del: Option<f64>,
    /// TOML scenario file; explicit flags override its values.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write the run's trace to this file.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Replay this recorded trace instead of running fresh; configuration
    /// flags are ignored (the trace carries its own).
    #[arg(long)]
    replay: Option<PathBuf>,
    /// After the run, reduce the trace to a semi-synchronous schedule and
    /// verify per-execution outcome equality.
    #[arg(long)]
    reduce_check: bool,
    /// Workload driving the run.
    #[arg(long, value_enum, default_value_t = App::Lockapi)]
    app: App,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum App {
    /// Every node cycles Lock → Unlock → Lock.
    Lockapi,
    /// Rumor-spreading population protocol.
    Popproto,
    /// No API calls.
    None,
}

impl App {
    fn kind(self) -> AppKind {
        match self {
            App::Lockapi => AppKind::LockCycle,
            App::Popproto => AppKind::Population,
            App::None => AppKind::Idle,
        }
    }
}

const EXIT_CLEAN: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run(args) => run(&args),
        Command::Stats { trace } => stats(&trace),
    };
    ExitCode::from(code)
}

/// Prints a parse/usage-class failure and returns the usage exit code.
fn usage_error(message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    EXIT_USAGE
}

fn run(args: &RunArgs) -> u8 {
    let (output, mut failed) = if let Some(path) = &args.replay {
        let trace = match TraceFile::load(path) {
            Ok(trace) => trace,
            Err(e) => return usage_error(format_args!("{}: {e}", path.display())),
        };
        let replayed = match replay_trace(&trace) {
            Ok(replayed) => replayed,
            Err(e) => {
                eprintln!("replay diverged from the recorded run: {e}");
                return EXIT_VIOLATION;
            }
        };
        match replayed.hash_matches {
            Some(true) => eprintln!("replay: final state matches the recorded hash"),
            Some(false) => eprintln!("replay: FINAL STATE MISMATCH"),
            None => eprintln!("replay: trace has no final hash to verify"),
        }
        (replayed.output, replayed.hash_matches == Some(false))
    } else {
        let config = match build_config(args) {
            Ok(config) => config,
            Err(message) => return usage_error(message),
        };
        match run_live(config, args.app.kind()) {
            Ok(output) => (output, false),
            Err(e) => return usage_error(e),
        }
    };

    if let Some(path) = &args.trace_out {
        if let Err(e) = output.trace.save(path) {
            return usage_error(format_args!("writing {}: {e}", path.display()));
        }
    }
    if args.reduce_check {
        failed |= !report_reduction(&output.trace);
    }
    failed |= !report_outcome(&output);
    println!("{}", output.summary.to_json());
    if failed {
        EXIT_VIOLATION
    } else {
        EXIT_CLEAN
    }
}

fn stats(path: &Path) -> u8 {
    let trace = match TraceFile::load(path) {
        Ok(trace) => trace,
        Err(e) => return usage_error(format_args!("{}: {e}", path.display())),
    };
    eprintln!("{}", trace.describe());
    let replayed = match replay_trace(&trace) {
        Ok(replayed) => replayed,
        Err(e) => {
            eprintln!("trace does not replay: {e}");
            return EXIT_VIOLATION;
        }
    };
    let mut failed = replayed.hash_matches == Some(false);
    if failed {
        eprintln!("replay: FINAL STATE MISMATCH");
    }
    failed |= !report_outcome(&replayed.output);
    println!("{}", replayed.output.summary.to_json());
    if failed {
        EXIT_VIOLATION
    } else {
        EXIT_CLEAN
    }
}

/// Assembles the run configuration: defaults, then scenario, then flags.
fn build_config(args: &RunArgs) -> Result<RunConfig, String> {
    let mut config = RunConfig::new(8, 2);
    if let Some(path) = &args.scenario {
        let scenario =
            Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        config = scenario.apply(config).map_err(|e| e.to_string())?;
    }
    if let Some(nodes) = args.nodes {
        config.nodes = nodes;
    }
    if let Some(delta) = args.delta {
        config.delta = delta;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(mode) = &args.mode {
        config.mode = parse_mode(mode)
            .ok_or_else(|| format!("mode must be `semisync` or `async`, got `{mode}`"))?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        config.horizon = horizon;
    }
    if let Some(fairness) = args.fairness {
        config.fairness_bound = fairness;
    }
    if let Some(max_span) = args.max_span {
        config.async_max_duration = max_span;
    }
    if let Some(p_add) = args.p_add {
        config.p_add = p_add;
    }
    if let Some(p_del) = args.p_del {
        config.p_del = p_del;
    }
    Ok(config)
}

/// Reports violations (and population results) on stderr; true when clean.
fn report_outcome(output: &RunOutput) -> bool {
    if let Some(states) = &output.agent_states {
        let informed = states.iter().filter(|&&s| s == 1).count();
        eprintln!("population: {informed}/{} agents informed", states.len());
    }
    let total = output.summary.violations.total();
    if total == 0 {
        true
    } else {
        eprintln!("{total} property violation(s):");
        for violation in &output.report.violations {
            eprintln!("  {violation:?}");
        }
        false
    }
}

/// Runs the async-to-semi-sync reduction check; true when it verifies.
fn report_reduction(trace: &TraceFile) -> bool {
    match verify_reduction(trace) {
        Ok(()) => {
            eprintln!("reduce-check: all executions match, 0 mismatches");
            true
        }
        Err(e) => {
            eprintln!("reduce-check: {e}");
            false
        }
    }
}
