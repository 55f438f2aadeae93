use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ftllb::experiment::{self, ExperimentSpec, Family, Preset, Protocol, SeedRange};
use ftllb::protocols::Inputs;
use ftllb::simnet::Strategy;
use std::path::PathBuf;
use std::process::ExitCode;

/// Monte-Carlo runner for fault-tolerant load balancing, counting and consensus.
///
/// Exit status: 0 when every hard invariant held, 1 when one was violated,
/// 2 on configuration or input errors.
#[derive(Parser, Debug)]
#[command(name = "ftllb", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Spectral and degree certification of a graph.
    CheckGraph(RunArgs),
    /// Standalone load balancing on a fixed graph.
    Llb(RunArgs),
    /// Approximate counting of raised flags.
    Count(RunArgs),
    /// Binary consensus against crash failures.
    ConsensusCrash(RunArgs),
    /// Binary consensus against omission failures.
    ConsensusOmission(RunArgs),
    /// Re-check a stored trace without simulating.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON or TOML spec; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// `a..b`, `a..=b` or a single seed.
    #[arg(long)]
    seed_range: Option<SeedRange>,
    /// e.g. crash:random, crash:targeted_extreme, omission:partition_flicker.
    #[arg(long)]
    adversary: Option<Strategy>,
    /// theory or desk.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    tau1: Option<usize>,
    #[arg(long)]
    tau2: Option<usize>,
    /// CSV file to append to; the JSON report goes next to it as `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-seed JSONL traces.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    oracle: Option<OnOff>,
    /// Edge-list file used instead of a sampled graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// gnp, regular, complete or cycle.
    #[arg(long)]
    family: Option<Family>,
    /// Degree for the regular family.
    #[arg(long)]
    degree: Option<usize>,
    /// Consensus inputs: random, 0 or 1.
    #[arg(long)]
    inputs: Option<String>,
    /// Number of raised counting flags.
    #[arg(long)]
    ones: Option<usize>,
    /// Print only the summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    trace: PathBuf,
    /// Comma-separated verdict names to keep (value_range, sandwich, sandwich_max_degree).
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    #[arg(long, value_enum)]
    oracle: Option<OnOff>,
}

fn spec_from(protocol: Protocol, a: &RunArgs) -> Result<ExperimentSpec> {
    let mut s = match &a.config {
        Some(p) => ExperimentSpec::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentSpec::new(protocol, a.n.context("--n is required without --config")?),
    };
    s.protocol = protocol;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field.clone() { s.$field = v; } )* };
    }
    macro_rules! set_opt {
        ($($field:ident),*) => { $( if a.$field.is_some() { s.$field = a.$field.clone(); } )* };
    }
    set!(n, t, preset, family);
    set_opt!(c1, c2, tau1, tau2, out, trace_dir, graph, degree, ones);
    if let Some(r) = a.seed_range {
        s.seeds = Some(r);
    }
    if let Some(adv) = a.adversary {
        s.adversary.strategy = adv;
    }
    if let Some(o) = a.oracle {
        s.oracle = o == OnOff::On;
    }
    if let Some(i) = &a.inputs {
        s.inputs = match i.as_str() {
            "random" => Inputs::Random,
            "0" => Inputs::Unanimous(0),
            "1" => Inputs::Unanimous(1),
            _ => bail!("--inputs must be random, 0 or 1"),
        };
    }
    Ok(s)
}

fn run(cmd: Cmd) -> Result<bool> {
    let (protocol, args) = match cmd {
        Cmd::Replay(r) => {
            if r.oracle == Some(OnOff::Off) {
                ftllb::simnet::validate_causality(&ftllb::simnet::read_trace(std::io::BufReader::new(std::fs::File::open(&r.trace)?))?)?;
                println!("{{\"causality\": \"ok\"}}");
                return Ok(true);
            }
            let rep = experiment::replay(&r.trace, r.only.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            return Ok(!rep.hard_violation);
        }
        Cmd::CheckGraph(a) => (Protocol::CheckGraph, a),
        Cmd::Llb(a) => (Protocol::Llb, a),
        Cmd::Count(a) => (Protocol::Count, a),
        Cmd::ConsensusCrash(a) => (Protocol::ConsensusCrash, a),
        Cmd::ConsensusOmission(a) => (Protocol::ConsensusOmission, a),
    };
    let spec = spec_from(protocol, &args)?;
    let report = experiment::run(&spec)?;
    if args.quiet {
        println!("{}", serde_json::to_string_pretty(&report.summary)?);
    } else {
        println!("{}", report.to_json()?);
    }
    if report.hard_violation() {
        eprintln!("hard invariant violated in {} of {} seeds", report.summary.hard_violations, report.summary.seeds);
    }
    Ok(!report.hard_violation())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
