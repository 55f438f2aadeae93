//! Batch experiments: one spec, a range of seeds, one report row per seed.
//!
//! Seeds run on a worker pool (size capped by `FTLLB_THREADS`); rows are
//! assembled in seed order so reports are a pure function of the spec.

mod replay;

pub use replay::{replay, ReplayReport};

use crate::error::{Error, Result};
use crate::graph::{
    check_well_connected, lambda2, sample_gnp, sample_regular, setgraph_density, Certification, Graph, WellConnectedParams,
};
use crate::llb::{derive_config_clamped, LbStatus, LlbConfig, TheoremBounds};
use crate::oracle::{sandwich_check, value_range_check, LlbTrace, OneVariant, OracleVerdict};
use crate::protocols::{consensus_config, counting_config, run_consensus, run_counting, ConsensusSpec, CountingSpec, Inputs, Mode};
use crate::llb::{run_llb, LlbSpec};
use crate::simnet::{write_trace, FaultKind, Metrics, Recording, RoundRecord, Strategy, TraceMeta};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Bumped whenever the CSV columns change.
pub const CSV_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 12] =
    ["seed", "protocol", "n", "t", "adversary", "agreed", "valid", "decided_value", "rounds", "messages", "bits", "active_count"];

/// Stream reserved for experiment-level randomness (initial loads, flags).
const INPUT_STREAM: u64 = u64::MAX - 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    CheckGraph,
    Llb,
    Count,
    #[serde(alias = "crash")]
    ConsensusCrash,
    #[serde(alias = "omission")]
    ConsensusOmission,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::CheckGraph => "check-graph",
            Protocol::Llb => "llb",
            Protocol::Count => "count",
            Protocol::ConsensusCrash => "consensus-crash",
            Protocol::ConsensusOmission => "consensus-omission",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::Config(format!("unknown protocol {s:?}")))
    }
}

/// Constant presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Constants of the asymptotic analysis; infeasible at most sizes.
    Theory,
    #[default]
    Desk,
}

impl Preset {
    /// `(C1, C2)`.
    pub fn constants(self) -> (f64, f64) {
        match self {
            Preset::Theory => (32768.0, 32768.0),
            Preset::Desk => (4.0, 8.0),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Preset::Theory),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?}"))),
        }
    }
}

/// Topology for `check-graph` and `llb`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `G(n, q)` at the union-graph density for `C2`.
    #[default]
    Gnp,
    /// Random `degree`-regular graph.
    Regular,
    Complete,
    Cycle,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::Config(format!("unknown graph family {s:?}")))
    }
}

/// Half-open seed range `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn single(seed: u64) -> Self {
        SeedRange { start: seed, end: seed + 1 }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `a..b`, `a..=b` or a single seed.
impl FromStr for SeedRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |x: &str| x.trim().parse::<u64>().map_err(|_| Error::Config(format!("bad seed range {s:?}")));
        if let Some((a, b)) = s.split_once("..=") {
            Ok(SeedRange { start: num(a)?, end: num(b)? + 1 })
        } else if let Some((a, b)) = s.split_once("..") {
            Ok(SeedRange { start: num(a)?, end: num(b)? })
        } else {
            Ok(SeedRange::single(num(s)?))
        }
    }
}

impl TryFrom<String> for SeedRange {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SeedRange> for String {
    fn from(r: SeedRange) -> String {
        format!("{}..{}", r.start, r.end)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub strategy: Strategy,
}

fn yes() -> bool {
    true
}

fn random_inputs() -> Inputs {
    Inputs::Random
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(alias = "mode")]
    pub protocol: Protocol,
    pub n: usize,
    #[serde(default)]
    pub t: usize,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default, alias = "C1")]
    pub c1: Option<f64>,
    #[serde(default, alias = "C2")]
    pub c2: Option<f64>,
    #[serde(default)]
    pub tau1: Option<usize>,
    #[serde(default)]
    pub tau2: Option<usize>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    /// Single seed; ignored when `seeds` is given.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub seeds: Option<SeedRange>,
    #[serde(default)]
    pub family: Family,
    /// Degree for the regular family.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Edge-list file; overrides `family`.
    #[serde(default)]
    pub graph: Option<PathBuf>,
    /// Consensus inputs.
    #[serde(default = "random_inputs")]
    pub inputs: Inputs,
    /// Raised counting flags; defaults to `n / 4` at random positions.
    #[serde(default)]
    pub ones: Option<usize>,
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub trace_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol, n: usize) -> Self {
        ExperimentSpec {
            protocol,
            n,
            t: 0,
            preset: Preset::Desk,
            c1: None,
            c2: None,
            tau1: None,
            tau2: None,
            adversary: AdversarySpec::default(),
            seed: None,
            seeds: None,
            family: Family::Gnp,
            degree: None,
            graph: None,
            inputs: Inputs::Random,
            ones: None,
            oracle: true,
            out: None,
            trace_dir: None,
        }
    }

    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed_range(&self) -> SeedRange {
        self.seeds.unwrap_or_else(|| SeedRange::single(self.seed.unwrap_or(0)))
    }

    /// `(C1, C2)` after overrides.
    pub fn constants(&self) -> (f64, f64) {
        let (c1, c2) = self.preset.constants();
        (self.c1.unwrap_or(c1), self.c2.unwrap_or(c2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_range().is_empty() {
            return Err(Error::Config("empty seed range".into()));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2 (n = {})", self.n)));
        }
        if self.t >= self.n {
            return Err(Error::Config(format!("t must be below n (t = {}, n = {})", self.t, self.n)));
        }
        let kind = self.adversary.strategy.kind();
        match self.protocol {
            Protocol::ConsensusCrash if kind == Some(FaultKind::Omission) => {
                return Err(Error::Config(format!("{} is not a crash adversary", self.adversary.strategy)))
            }
            Protocol::ConsensusOmission if kind == Some(FaultKind::Crash) => {
                return Err(Error::Config(format!("{} is not an omission adversary", self.adversary.strategy)))
            }
            _ => {}
        }
        if let Inputs::Unanimous(b) = self.inputs {
            if b > 1 {
                return Err(Error::Config("unanimous input must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    fn refuse_theory(&self, e: Error) -> Error {
        match e {
            Error::InvalidDensity { q } if self.preset == Preset::Theory && self.c2.is_none() => Error::Config(format!(
                "the theory preset needs edge density q = {q:.3e} > 1 at n = {}; the analysis constants only make sense \
                 asymptotically, use --preset desk or smaller --c2",
                self.n
            )),
            e => e,
        }
    }
}

/// Fixed CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub protocol: String,
    pub n: usize,
    pub t: usize,
    pub adversary: String,
    pub agreed: bool,
    pub valid: bool,
    pub decided_value: Option<u64>,
    pub rounds: u64,
    pub messages: u64,
    pub bits: u64,
    pub active_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub row: Row,
    /// Hard invariant (value range, sandwich, agreement persistence) broken.
    pub hard_violation: bool,
    pub verdicts: Vec<OracleVerdict>,
    pub warnings: Vec<String>,
    /// Protocol-specific figures.
    pub details: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub hard_violations: usize,
    pub warnings: usize,
    pub rounds_p50: u64,
    pub rounds_p90: u64,
    pub rounds_max: u64,
    pub messages_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub spec: ExperimentSpec,
    pub constants: (f64, f64),
    pub seeds: Vec<SeedReport>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.seeds.iter().map(|s| &s.row)
    }

    /// True when any seed broke a hard invariant.
    pub fn hard_violation(&self) -> bool {
        self.seeds.iter().any(|s| s.hard_violation)
    }

    /// CSV text: version comment, header, one row per seed, then one comment
    /// line per warning.
    pub fn to_csv(&self, header: bool) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        if header {
            w.write_record(CSV_COLUMNS)?;
        }
        for s in &self.seeds {
            w.serialize(&s.row)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?).expect("csv is utf-8");
        let mut out = String::new();
        if header {
            out.push_str(&format!("# ftllb experiment csv v{CSV_VERSION}: {}\n", CSV_COLUMNS.join(",")));
        }
        out.push_str(&body);
        for s in &self.seeds {
            for warn in &s.warnings {
                out.push_str(&format!("# warning seed={} {warn}\n", s.row.seed));
            }
        }
        Ok(out)
    }

    /// Appends to `path`, writing the header only into a new or empty file.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(self.to_csv(fresh)?.as_bytes())?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Worker count: `FTLLB_THREADS` when set, otherwise rayon's default.
pub fn worker_threads() -> usize {
    std::env::var("FTLLB_THREADS").ok().and_then(|s| s.parse().ok()).filter(|&k| k > 0).unwrap_or_else(rayon::current_num_threads)
}

/// Maps `f` over `items` on the experiment pool, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_threads()).build().map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

/// Runs every seed; writes CSV and JSON when `spec.out` is set (`out` and
/// `out.json`) and per-seed traces into `spec.trace_dir`.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let r = spec.seed_range();
    let seeds: Vec<u64> = (r.start..r.end).collect();
    if let Some(dir) = &spec.trace_dir {
        fs::create_dir_all(dir)?;
    }
    let file_graph = spec.graph.as_deref().map(Graph::read_edge_list).transpose()?;
    let reports = par_map(&seeds, |&seed| run_seed(spec, file_graph.as_ref(), seed))?.into_iter().collect::<Result<Vec<_>>>()?;
    let report = ExperimentReport { version: CSV_VERSION, spec: spec.clone(), constants: spec.constants(), summary: summarize(&reports), seeds: reports };
    if let Some(out) = &spec.out {
        report.append_csv(out)?;
        let mut json = out.clone().into_os_string();
        json.push(".json");
        fs::write(PathBuf::from(json), report.to_json()?)?;
    }
    Ok(report)
}

fn summarize(rows: &[SeedReport]) -> Summary {
    let successes = rows.iter().filter(|s| s.row.agreed && s.row.valid).count();
    let mut rounds: Vec<u64> = rows.iter().map(|s| s.row.rounds).collect();
    rounds.sort_unstable();
    let pct = |p: f64| rounds.get(((rounds.len() as f64 - 1.0) * p).round() as usize).copied().unwrap_or(0);
    Summary {
        seeds: rows.len(),
        successes,
        success_rate: successes as f64 / rows.len().max(1) as f64,
        hard_violations: rows.iter().filter(|s| s.hard_violation).count(),
        warnings: rows.iter().map(|s| s.warnings.len()).sum(),
        rounds_p50: pct(0.5),
        rounds_p90: pct(0.9),
        rounds_max: rounds.last().copied().unwrap_or(0),
        messages_mean: rows.iter().map(|s| s.row.messages as f64).sum::<f64>() / rows.len().max(1) as f64,
    }
}

fn run_seed(spec: &ExperimentSpec, file_graph: Option<&Graph>, seed: u64) -> Result<SeedReport> {
    match spec.protocol {
        Protocol::CheckGraph => check_graph_seed(spec, file_graph, seed),
        Protocol::Llb => llb_seed(spec, file_graph, seed),
        Protocol::Count => count_seed(spec, seed),
        Protocol::ConsensusCrash => consensus_seed(spec, Mode::Crash, seed),
        Protocol::ConsensusOmission => consensus_seed(spec, Mode::Omission, seed),
    }
}

fn row(spec: &ExperimentSpec, seed: u64, metrics: Metrics) -> Row {
    Row {
        seed,
        protocol: spec.protocol.name().into(),
        n: spec.n,
        t: spec.t,
        adversary: spec.adversary.strategy.name().into(),
        agreed: false,
        valid: false,
        decided_value: None,
        rounds: metrics.rounds,
        messages: metrics.messages,
        bits: metrics.bits(),
        active_count: 0,
    }
}

fn build_graph(spec: &ExperimentSpec, file_graph: Option<&Graph>, seed: u64) -> Result<Graph> {
    if let Some(g) = file_graph {
        if g.n() != spec.n {
            return Err(Error::Config(format!("graph file has {} nodes, spec says n = {}", g.n(), spec.n)));
        }
        return Ok(g.clone());
    }
    match spec.family {
        Family::Gnp => {
            let (q, _) = setgraph_density(spec.n, spec.constants().1).map_err(|e| spec.refuse_theory(e))?;
            Ok(sample_gnp(spec.n, q, seed))
        }
        Family::Regular => {
            let d = spec.degree.ok_or_else(|| Error::Config("the regular family needs a degree".into()))?;
            sample_regular(spec.n, d, seed)
        }
        Family::Complete => Ok(Graph::complete(spec.n)),
        Family::Cycle => Ok(Graph::cycle(spec.n)),
    }
}

fn certify(spec: &ExperimentSpec, g: &Graph) -> Result<Certification> {
    let params = match spec.preset {
        Preset::Desk => WellConnectedParams::desk(g),
        Preset::Theory => WellConnectedParams::new(g.n(), g.min_degree() as f64, g.max_degree() as f64),
    };
    check_well_connected(g, &params)
}

fn check_graph_seed(spec: &ExperimentSpec, file_graph: Option<&Graph>, seed: u64) -> Result<SeedReport> {
    let g = build_graph(spec, file_graph, seed)?;
    let mut warnings = Vec::new();
    let (cert, l2) = if g.min_degree() == 0 {
        warnings.push("graph has an isolated node".to_string());
        (None, None)
    } else {
        let c = certify(spec, &g)?;
        let l2 = lambda2(&g)?.lambda2;
        (Some(c), Some(l2))
    };
    let passed = cert.as_ref().is_some_and(|c| c.verdict.passed());
    if !passed && cert.is_some() {
        warnings.push("graph not certified".into());
    }
    let mut r = row(spec, seed, Metrics::default());
    r.agreed = passed;
    r.valid = passed;
    r.active_count = g.n();
    Ok(SeedReport {
        row: r,
        hard_violation: false,
        verdicts: vec![],
        warnings,
        details: serde_json::json!({ "lambda2": l2, "m": g.m(), "certification": cert }),
    })
}

fn fault_kind(spec: &ExperimentSpec) -> FaultKind {
    spec.adversary.strategy.kind().unwrap_or(FaultKind::Crash)
}

fn input_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INPUT_STREAM);
    rng
}

fn with_overrides(mut cfg: LlbConfig, spec: &ExperimentSpec) -> LlbConfig {
    cfg.tau1 = spec.tau1.unwrap_or(cfg.tau1);
    cfg.tau2 = spec.tau2.unwrap_or(cfg.tau2);
    cfg
}

fn trace_path(spec: &ExperimentSpec, seed: u64) -> Option<PathBuf> {
    spec.trace_dir.as_ref().map(|d| d.join(format!("{}-seed{seed}.jsonl", spec.protocol.name())))
}

fn save_trace(spec: &ExperimentSpec, seed: u64, records: &[RoundRecord]) -> Result<()> {
    if let Some(p) = trace_path(spec, seed) {
        write_trace(std::io::BufWriter::new(fs::File::create(p)?), records)?;
    }
    Ok(())
}

fn llb_seed(spec: &ExperimentSpec, file_graph: Option<&Graph>, seed: u64) -> Result<SeedReport> {
    let g = build_graph(spec, file_graph, seed)?;
    let mut warnings = Vec::new();
    if g.min_degree() == 0 {
        return Err(Error::DegenerateGraph { node: (0..g.n()).find(|&v| g.degree(v) == 0).unwrap() });
    }
    let cert = certify(spec, &g)?;
    if !cert.verdict.passed() {
        warnings.push(format!("graph not certified ({:?})", cert.verdict));
    }
    let (dmin, dmax) = (g.min_degree() as f64, g.max_degree() as f64);
    let cfg = with_overrides(derive_config_clamped(g.n(), dmin, dmax)?, spec);
    let mut rng = input_rng(seed);
    let x0: Vec<f64> = (0..g.n()).map(|_| rng.gen()).collect();
    let full = spec.oracle || spec.trace_dir.is_some();
    let run = run_llb(&LlbSpec {
        graph: &g,
        x0: &x0,
        cfg,
        kind: fault_kind(spec),
        strategy: spec.adversary.strategy,
        t: spec.t,
        seed,
        recording: if full { Recording::Full } else { Recording::Off },
        track_omissions: fault_kind(spec) == FaultKind::Omission,
    })?;
    save_trace(spec, seed, &run.records)?;
    let (verdicts, hard) = if spec.oracle { llb_verdicts(&LlbTrace::from_records(&run.records)?) } else { (vec![], false) };
    let n = g.n();
    let mu = x0.iter().sum::<f64>() / n as f64;
    let live: Vec<usize> = (0..n).filter(|&v| !run.crashed[v]).collect();
    let active: Vec<usize> = live.iter().copied().filter(|&v| run.outcomes[v].status == LbStatus::Active).collect();
    let dev = active.iter().map(|&v| (run.outcomes[v].x - mu).abs()).fold(0.0, f64::max);
    let (lo, hi) = x0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut r = row(spec, seed, run.metrics);
    r.agreed = dev <= 1.0 / n as f64;
    r.valid = live.iter().all(|&v| run.outcomes[v].x >= lo - 1e-9 && run.outcomes[v].x <= hi + 1e-9);
    r.active_count = active.len();
    let bounds = TheoremBounds::evaluate(n, spec.t, dmin, dmax, cfg.tau1);
    Ok(SeedReport {
        row: r,
        hard_violation: hard,
        verdicts,
        warnings,
        details: serde_json::json!({
            "mu": mu,
            "max_active_deviation": dev,
            "d_min": dmin,
            "d_max": dmax,
            "tau1": cfg.tau1,
            "tau2": cfg.tau2,
            "lambda2": cert.spectral.map(|s| s.lambda2),
            "bounds": bounds,
        }),
    })
}

/// Value range and the sandwich form that applies to the trace's degree
/// window; the verbatim form is added as information on irregular windows.
/// Returns the verdicts and whether a gated one failed.
pub(crate) fn llb_verdicts(trace: &LlbTrace) -> (Vec<OracleVerdict>, bool) {
    let range = value_range_check(trace, 1e-9);
    let gated = if trace.meta.d_min == trace.meta.d_max { OneVariant::MinDegree } else { OneVariant::MaxDegree };
    let sandwich = sandwich_check(trace, gated, 1e-9);
    let hard = !range.passed || !sandwich.passed;
    let mut v = vec![range, sandwich];
    if gated == OneVariant::MaxDegree {
        v.push(sandwich_check(trace, OneVariant::MinDegree, 1e-9));
    }
    (v, hard)
}

fn count_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedReport> {
    let n = spec.n;
    let mut cfg = counting_config(n, spec.constants().1).map_err(|e| spec.refuse_theory(e))?;
    cfg.llb = with_overrides(cfg.llb, spec);
    let k = spec.ones.unwrap_or(n / 4).min(n);
    let mut flags = vec![false; n];
    for v in sample(&mut input_rng(seed), n, k) {
        flags[v] = true;
    }
    let run = run_counting(&CountingSpec {
        cfg,
        flags: &flags,
        kind: fault_kind(spec),
        strategy: spec.adversary.strategy,
        t: spec.t,
        seed,
        recording: if spec.trace_dir.is_some() { Recording::Digests } else { Recording::Off },
    })?;
    if spec.trace_dir.is_some() {
        let meta = meta_for(spec, fault_kind(spec), seed, cfg.llb);
        save_trace(spec, seed, &with_header(n, meta, run.records.clone()))?;
    }
    let eps = TheoremBounds::evaluate(n, spec.t, cfg.llb.d_min, cfg.llb.d_max, cfg.llb.tau1).eps;
    let tol = count_tolerance(n, eps);
    let reporting = run.reporting();
    let mut r = row(spec, seed, run.metrics);
    r.agreed = reporting + 3 * spec.t >= n && run.max_error() <= tol;
    r.valid = run.estimates.iter().flatten().all(|&e| e <= n as u64);
    let mut est = (0..n).filter(|&v| !run.faulted[v]).filter_map(|v| run.estimates[v]);
    r.decided_value = est.next().filter(|&e| est.all(|x| x == e));
    r.active_count = reporting;
    Ok(SeedReport {
        row: r,
        hard_violation: false,
        verdicts: vec![],
        warnings: vec![],
        details: serde_json::json!({
            "truth": run.truth,
            "max_error": run.max_error(),
            "tolerance": tol,
            "eps": eps,
            "q": cfg.q,
            "tau1": cfg.llb.tau1,
            "tau2": cfg.llb.tau2,
        }),
    })
}

/// Allowed `|estimate - truth|`: `floor(eps n)`, or 0 when no fault is allowed.
pub fn count_tolerance(n: usize, eps: Option<f64>) -> u64 {
    match eps {
        Some(e) if e.is_finite() => (e * n as f64).floor().min(n as f64) as u64,
        _ => n as u64,
    }
}

fn meta_for(spec: &ExperimentSpec, kind: FaultKind, seed: u64, llb: LlbConfig) -> TraceMeta {
    TraceMeta {
        protocol: spec.protocol.name().into(),
        n: spec.n,
        kind,
        budget: spec.t,
        seed,
        d_min: llb.d_min,
        d_max: llb.d_max,
        tau1: llb.tau1,
        tau2: llb.tau2,
        edges: None,
    }
}

fn with_header(n: usize, meta: TraceMeta, records: Vec<RoundRecord>) -> Vec<RoundRecord> {
    let mut out = vec![RoundRecord {
        round: 0,
        faulted: vec![],
        messages_sent: 0,
        messages_dropped: 0,
        per_node_digest: vec![0; n],
        heard: None,
        loads: None,
        meta: Some(meta),
    }];
    out.extend(records);
    out
}

fn consensus_seed(spec: &ExperimentSpec, mode: Mode, seed: u64) -> Result<SeedReport> {
    let (c1, c2) = spec.constants();
    let mut cfg = consensus_config(mode, spec.n, spec.t, c1, c2).map_err(|e| spec.refuse_theory(e))?;
    cfg.tau1 = spec.tau1.unwrap_or(cfg.tau1);
    cfg.tau2 = spec.tau2.unwrap_or(cfg.tau2);
    let inputs = spec.inputs.generate(spec.n, seed);
    let run = run_consensus(&ConsensusSpec {
        cfg,
        inputs: &inputs,
        strategy: spec.adversary.strategy,
        t: spec.t,
        seed,
        recording: if spec.trace_dir.is_some() { Recording::Digests } else { Recording::Off },
    })?;
    if spec.trace_dir.is_some() {
        let d = cfg.d_star();
        let llb = LlbConfig { n: spec.n, d_min: d * (1.0 - cfg.delta), d_max: d * (1.0 + cfg.delta), tau1: cfg.tau1, tau2: cfg.tau2 };
        save_trace(spec, seed, &with_header(spec.n, meta_for(spec, mode.kind(), seed, llb), run.records.clone()))?;
    }
    let mut verdicts = Vec::new();
    if spec.oracle {
        let a = &run.audit;
        let verdict = |lemma: &str, bad: usize, what: &str| OracleVerdict {
            lemma: lemma.into(),
            passed: bad == 0,
            first_violation: (bad > 0).then(|| crate::oracle::Violation { round: 0, node: None, detail: format!("{bad} {what}") }),
            margins: Default::default(),
        };
        verdicts.push(verdict("value_range", a.range_violations, "loads outside the input range"));
        verdicts.push(verdict("agreement_persistence", a.persistence_violations, "boundaries broke agreement"));
        verdicts.push(verdict("unanimity", a.unanimity_violations, "bits left a unanimous input"));
    }
    let hard = run.audit.range_violations > 0 || run.audit.persistence_violations > 0;
    let mut r = row(spec, seed, run.metrics);
    r.agreed = run.agreed;
    r.valid = run.valid;
    r.decided_value = run.decided_value.map(u64::from);
    r.active_count = run.active_count;
    let suspected = run.suspected_count();
    Ok(SeedReport {
        row: r,
        hard_violation: hard,
        verdicts,
        warnings: vec![],
        details: serde_json::json!({
            "iterations": cfg.iterations,
            "iteration_rounds": cfg.iteration_rounds(),
            "tau1": cfg.tau1,
            "tau2": cfg.tau2,
            "q": cfg.q,
            "faulty": run.faulted.iter().filter(|&&f| f).count(),
            "inquired": suspected,
            "answered": run.answered.iter().filter(|&&a| a).count(),
            "first_agreement": run.audit.first_agreement,
        }),
    })
}

#[cfg(test)]
mod tests;
