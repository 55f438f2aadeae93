use crate::error::{Error, Result};
use crate::graph::{setgraph_density, NodeId};
use crate::llb::{derive_config_clamped, LbStatus, LlbConfig, LlbMachine};
use crate::protocols::{decide_threshold, pick_others, sample_targets};
use crate::simnet::{
    build_adversary, digest_with, AdversaryConfig, Ctx, Engine, EngineConfig, FaultKind, Inbox, Metrics, Observation,
    Outgoing, Process, Recording, RoundRecord, Stage, Strategy, Topology,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Crash,
    Omission,
}

impl Mode {
    pub fn kind(self) -> FaultKind {
        match self {
            Mode::Crash => FaultKind::Crash,
            Mode::Omission => FaultKind::Omission,
        }
    }
}

/// How a node picks the degree window of each balancing call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeEstimate {
    /// `d = q (n - 1)` for every node.
    Nominal,
    /// `d` = the node's own degree in the sampled graph.
    Local,
}

/// What a node does after hearing too little during dissemination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipPolicy {
    /// Skip the rest of this dissemination, take part again next iteration.
    ResumeNextIteration,
    /// Stay silent until the inquiry.
    SilentForever,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub mode: Mode,
    pub n: usize,
    pub t: usize,
    pub c1: f64,
    pub c2: f64,
    /// Edge probability of a sampled graph and per-direction sampling probability.
    pub q: f64,
    pub p: f64,
    /// Relative half-width of the degree window.
    pub delta: f64,
    pub iterations: usize,
    /// Crash mode only; 0 otherwise.
    pub dissemination_rounds: usize,
    pub threshold_margin: f64,
    pub inquiry_count: usize,
    /// Below this many messages in a dissemination round a node skips.
    pub skip_threshold: f64,
    pub tau1: usize,
    pub tau2: usize,
    pub degree_estimate: DegreeEstimate,
    pub skip_policy: SkipPolicy,
}

impl ConsensusConfig {
    /// Rounds in one main-loop iteration.
    pub fn iteration_rounds(&self) -> usize {
        1 + self.tau1 + self.tau2 + self.dissemination_rounds
    }

    /// Rounds before the first iteration.
    pub fn setup_rounds(&self) -> usize {
        match self.mode {
            Mode::Crash => 1,
            Mode::Omission => 0,
        }
    }

    pub fn total_rounds(&self) -> usize {
        self.setup_rounds() + self.iterations * self.iteration_rounds() + 2
    }

    /// Expected sampled degree `C2 ln n (ln ln n)^2`.
    pub fn d_star(&self) -> f64 {
        self.q * (self.n as f64 - 1.0)
    }

    fn llb_for(&self, local_degree: usize) -> LlbConfig {
        let d = match self.degree_estimate {
            DegreeEstimate::Nominal => self.d_star(),
            DegreeEstimate::Local => local_degree.max(1) as f64,
        };
        LlbConfig { n: self.n, d_min: d * (1.0 - self.delta), d_max: d * (1.0 + self.delta), tau1: self.tau1, tau2: self.tau2 }
    }

    fn phase(&self, r: usize) -> Phase {
        let Some(r) = r.checked_sub(self.setup_rounds()) else { return Phase::Star };
        let len = self.iteration_rounds();
        let (i, k) = (r / len, r % len);
        if i < self.iterations {
            let llb = self.tau1 + self.tau2;
            return if k == 0 {
                Phase::Sample(i)
            } else if k <= llb {
                Phase::Llb(i, k == llb)
            } else {
                Phase::Dissem(i, k - llb - 1 == self.dissemination_rounds - 1)
            };
        }
        match r - self.iterations * len {
            0 => Phase::Request,
            1 => Phase::Reply,
            _ => Phase::Done,
        }
    }
}

/// Parameters for `n` nodes, budget `t` and constants `c1`, `c2`.
pub fn consensus_config(mode: Mode, n: usize, t: usize, c1: f64, c2: f64) -> Result<ConsensusConfig> {
    if n < 16 {
        return Err(Error::InvalidParameter(format!("consensus needs n >= 16 (n = {n})")));
    }
    if !(c1 > 0.0) {
        return Err(Error::InvalidParameter(format!("C1 must be positive (C1 = {c1})")));
    }
    let (q, p) = setgraph_density(n, c2)?;
    let nf = n as f64;
    let ln = nf.ln();
    let lnln = ln.ln();
    let delta = 1.0 / (20.0 * lnln);
    let window = derive_config_clamped(n, 1.0 - delta, 1.0 + delta)?;
    let d_star = q * (nf - 1.0);
    let (iterations, dissemination_rounds, threshold_margin, inquiry_count) = match mode {
        Mode::Crash => (
            (c1 * (nf * ln).sqrt()).ceil() as usize,
            40 * ln.ceil() as usize + 1,
            (ln / nf).sqrt() / 40.0,
            (10.0 * ln).ceil() as usize,
        ),
        Mode::Omission => (
            (2.0 * c1 * (t as f64 * ln / nf.sqrt()).max(ln)).ceil() as usize,
            0,
            (ln / nf).sqrt() / 12.0,
            (11.0 * c2 * ln * lnln * lnln * t as f64).ceil() as usize + 1,
        ),
    };
    Ok(ConsensusConfig {
        mode,
        n,
        t,
        c1,
        c2,
        q,
        p,
        delta,
        iterations,
        dissemination_rounds,
        threshold_margin,
        inquiry_count,
        skip_threshold: d_star * (1.0 - delta) / 5.0,
        tau1: window.tau1,
        tau2: window.tau2,
        degree_estimate: DegreeEstimate::Local,
        skip_policy: SkipPolicy::ResumeNextIteration,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Star,
    Sample(usize),
    /// Iteration and whether this is the last balancing round.
    Llb(usize, bool),
    /// Iteration and whether this is the last dissemination round.
    Dissem(usize, bool),
    Request,
    Reply,
    Done,
}

const STAR: u8 = 0;
const ROUND: u8 = 1;

/// Flat message: a tag, a bit and a value.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Msg {
    tag: Tag,
    bit: u8,
    value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
enum Tag {
    Dummy,
    Load,
    Share,
    Request,
    Reply,
}

impl Msg {
    const DUMMY: Msg = Msg { tag: Tag::Dummy, bit: 0, value: 0.0 };
    const REQUEST: Msg = Msg { tag: Tag::Request, bit: 0, value: 0.0 };

    fn load(x: f64) -> Msg {
        Msg { tag: Tag::Load, bit: 0, value: x }
    }

    fn share(mu: f64, active: bool) -> Msg {
        Msg { tag: Tag::Share, bit: active as u8, value: mu }
    }

    fn reply(b: u8) -> Msg {
        Msg { tag: Tag::Reply, bit: b, value: 0.0 }
    }
}

#[derive(Clone, Debug)]
struct Node {
    cfg: ConsensusConfig,
    r: usize,
    phase: Phase,
    b: u8,
    mu: f64,
    lb_active: bool,
    machine: Option<LlbMachine>,
    skipping: bool,
    ever_skipped: bool,
    suspected: bool,
    inquired: bool,
    answered: bool,
    requests: Vec<NodeId>,
}

impl Node {
    fn new(cfg: ConsensusConfig, b: u8) -> Self {
        Node {
            cfg,
            r: 0,
            phase: cfg.phase(0),
            b,
            mu: b as f64,
            lb_active: true,
            machine: None,
            skipping: false,
            ever_skipped: false,
            suspected: false,
            inquired: false,
            answered: false,
            requests: Vec::new(),
        }
    }

    /// Takes no part in the main loop any more.
    fn withdrawn(&self) -> bool {
        match self.cfg.mode {
            Mode::Crash => self.ever_skipped && self.cfg.skip_policy == SkipPolicy::SilentForever,
            Mode::Omission => self.suspected,
        }
    }

    /// Must ask others for the decision.
    fn needs_inquiry(&self) -> bool {
        match self.cfg.mode {
            Mode::Crash => self.ever_skipped,
            Mode::Omission => self.suspected,
        }
    }

    fn llb_layer(&self) -> u8 {
        match self.cfg.mode {
            Mode::Crash => ROUND,
            Mode::Omission => STAR,
        }
    }
}

impl Process for Node {
    type Msg = Msg;

    fn send(&mut self, ctx: &mut Ctx<'_>) -> Outgoing<Msg> {
        let cfg = self.cfg;
        match self.phase {
            Phase::Star => Outgoing::Sample { layer: STAR, targets: sample_targets(ctx.n, ctx.id, cfg.p, ctx.rng), msg: Msg::DUMMY },
            Phase::Sample(_) if !self.withdrawn() => Outgoing::Sample {
                layer: self.llb_layer(),
                targets: sample_targets(ctx.n, ctx.id, cfg.p, ctx.rng),
                msg: Msg::DUMMY,
            },
            Phase::Llb(..) if !self.withdrawn() => match self.machine.as_ref().and_then(|m| m.outgoing()) {
                Some(x) => Outgoing::Multicast { layer: self.llb_layer(), msg: Msg::load(x) },
                None => Outgoing::Silent,
            },
            Phase::Dissem(..) if !self.withdrawn() && !self.skipping => {
                Outgoing::Multicast { layer: STAR, msg: Msg::share(self.mu, self.lb_active) }
            }
            Phase::Request if self.needs_inquiry() => {
                let targets = pick_others(ctx.n, ctx.id, cfg.inquiry_count, ctx.rng);
                Outgoing::Direct(targets.into_iter().map(|u| (u, Msg::REQUEST)).collect())
            }
            Phase::Reply if !self.needs_inquiry() && !self.requests.is_empty() => {
                Outgoing::Direct(self.requests.iter().map(|&u| (u, Msg::reply(self.b))).collect())
            }
            _ => Outgoing::Silent,
        }
    }

    fn receive(&mut self, inbox: &Inbox<'_, Msg>, ctx: &mut Ctx<'_>) {
        let cfg = self.cfg;
        let phase = self.phase;
        self.r += 1;
        self.phase = cfg.phase(self.r);
        if self.withdrawn() && !matches!(phase, Phase::Request | Phase::Reply) {
            return;
        }
        match phase {
            Phase::Star | Phase::Done => {}
            Phase::Sample(_) => {
                let layer = self.llb_layer();
                self.skipping = false;
                let llb = cfg.llb_for(ctx.degree(layer));
                self.machine = Some(LlbMachine::new(llb, self.b as f64, cfg.mode == Mode::Omission));
            }
            Phase::Llb(_, last) => {
                let degree = ctx.degree(self.llb_layer());
                let Some(m) = self.machine.as_mut() else { return };
                m.absorb(
                    inbox.ports.iter().map(|d| {
                        debug_assert_eq!(d.msg.tag, Tag::Load);
                        (d.port, d.msg.value)
                    }),
                    degree,
                );
                if last {
                    self.mu = m.x();
                    self.lb_active = m.status() == LbStatus::Active;
                    if cfg.mode == Mode::Omission {
                        if m.omitted() > 0 {
                            self.suspected = true;
                        }
                        self.b = decide_threshold(self.mu, cfg.threshold_margin, ctx.rng.gen_bool(0.5));
                    }
                }
            }
            Phase::Dissem(_, last) => {
                if !self.skipping {
                    if (inbox.ports.len() as f64) < cfg.skip_threshold {
                        self.skipping = true;
                        self.ever_skipped = true;
                    } else if let Some(mu) = inbox.ports.iter().find(|d| d.msg.tag == Tag::Share && d.msg.bit == 1).map(|d| d.msg.value) {
                        self.mu = mu;
                        self.lb_active = true;
                    }
                }
                if last {
                    self.b = decide_threshold(self.mu, cfg.threshold_margin, ctx.rng.gen_bool(0.5));
                }
            }
            Phase::Request => {
                self.requests.clear();
                self.requests.extend(inbox.direct.iter().filter(|(_, m)| m.tag == Tag::Request).map(|&(u, _)| u));
                self.inquired = self.needs_inquiry();
            }
            Phase::Reply => {
                if let Some(b) = inbox.direct.iter().find(|(_, m)| m.tag == Tag::Reply).map(|(_, m)| m.bit) {
                    if self.needs_inquiry() {
                        self.b = b;
                        self.answered = true;
                    }
                }
            }
        }
    }

    fn observe(&self) -> Observation {
        let stage = match self.phase {
            _ if self.withdrawn() => Stage::Idle,
            Phase::Star | Phase::Sample(_) => Stage::Sampling,
            Phase::Llb(..) => return self.machine.as_ref().map_or(Observation { load: None, stage: Stage::Idle }, |m| {
                Observation { load: Some(m.x()), stage: m.stage() }
            }),
            Phase::Dissem(..) => return Observation { load: Some(self.mu), stage: Stage::Disseminating },
            Phase::Request | Phase::Reply => Stage::Inquiry,
            Phase::Done => Stage::Done,
        };
        Observation { load: None, stage }
    }

    fn digest(&self) -> u64 {
        digest_with(|h| {
            h.write_usize(self.r);
            h.write_u8(self.b);
            h.write_u64(self.mu.to_bits());
            h.write_u8(self.lb_active as u8 | (self.skipping as u8) << 1 | (self.ever_skipped as u8) << 2 | (self.suspected as u8) << 3);
            if let Some(m) = &self.machine {
                h.write_u64(m.x().to_bits());
            }
        })
    }
}

/// How initial bits are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inputs {
    /// Independent fair bits from the run seed.
    Random,
    /// Every node starts with this bit.
    Unanimous(u8),
    /// The first `k` nodes start with 1.
    Ones(usize),
}

impl Inputs {
    pub fn generate(self, n: usize, seed: u64) -> Vec<u8> {
        match self {
            Inputs::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX - 1);
                (0..n).map(|_| rng.gen_bool(0.5) as u8).collect()
            }
            Inputs::Unanimous(b) => vec![b.min(1); n],
            Inputs::Ones(k) => (0..n).map(|v| (v < k) as u8).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConsensusSpec<'a> {
    pub cfg: ConsensusConfig,
    pub inputs: &'a [u8],
    pub strategy: Strategy,
    pub t: usize,
    pub seed: u64,
    pub recording: Recording,
}

/// Invariant audit collected while the protocol runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusAudit {
    /// Loads outside the range of bits held when the balancing call started.
    pub range_violations: usize,
    /// First iteration boundary at which every audited node held the same bit.
    pub first_agreement: Option<usize>,
    /// Boundaries after `first_agreement` where the audited nodes disagreed.
    pub persistence_violations: usize,
    /// Audited nodes whose bit ever differed from a unanimous input.
    pub unanimity_violations: usize,
}

impl ConsensusAudit {
    pub fn ok(&self) -> bool {
        self.range_violations == 0 && self.persistence_violations == 0 && self.unanimity_violations == 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsensusRun {
    pub decisions: Vec<u8>,
    pub faulted: Vec<bool>,
    pub crashed: Vec<bool>,
    /// Nodes that had to inquire: ever skipped (crash) or suspected (omission).
    pub inquired: Vec<bool>,
    /// Inquiring nodes that received at least one answer.
    pub answered: Vec<bool>,
    /// Every non-faulty node decided the same bit.
    pub agreed: bool,
    /// Every non-faulty decision is some node's input.
    pub valid: bool,
    pub decided_value: Option<u8>,
    pub active_count: usize,
    pub metrics: Metrics,
    pub audit: ConsensusAudit,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
}

impl ConsensusRun {
    pub fn suspected_count(&self) -> usize {
        self.inquired.iter().filter(|&&x| x).count()
    }
}

fn audited(mode: Mode, crashed: bool, node: &Node) -> bool {
    match mode {
        Mode::Crash => !crashed,
        Mode::Omission => !node.suspected,
    }
}

pub fn run_consensus(spec: &ConsensusSpec<'_>) -> Result<ConsensusRun> {
    let cfg = spec.cfg;
    let n = cfg.n;
    if spec.inputs.len() != n || spec.inputs.iter().any(|&b| b > 1) {
        return Err(Error::InvalidParameter(format!("need {n} input bits")));
    }
    if spec.strategy.kind().is_some_and(|k| k != cfg.mode.kind()) {
        return Err(Error::InvalidParameter(format!("adversary {} does not match {:?} mode", spec.strategy, cfg.mode)));
    }
    let nodes: Vec<Node> = spec.inputs.iter().map(|&b| Node::new(cfg, b)).collect();
    let total = cfg.total_rounds();
    let adversary = build_adversary(&AdversaryConfig { strategy: spec.strategy, budget: spec.t, horizon: total as u64, seed: spec.seed });
    let ecfg = EngineConfig { seed: spec.seed, kind: cfg.mode.kind(), budget: spec.t, recording: spec.recording };
    let mut engine = Engine::new(nodes, vec![Topology::default(), Topology::default()], adversary, &ecfg);

    let unanimous = spec.inputs.iter().all(|&b| b == spec.inputs[0]).then_some(spec.inputs[0]);
    let mut audit = ConsensusAudit::default();
    engine.run_rounds(cfg.setup_rounds())?;
    for i in 0..cfg.iterations {
        engine.run_round()?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, node) in engine.nodes().iter().enumerate() {
            if node.machine.is_some() && !engine.crashed()[v] && !node.withdrawn() {
                lo = lo.min(node.b as f64);
                hi = hi.max(node.b as f64);
            }
        }
        for _ in 0..cfg.tau1 + cfg.tau2 {
            engine.run_round()?;
            for (v, node) in engine.nodes().iter().enumerate() {
                if engine.crashed()[v] || node.withdrawn() {
                    continue;
                }
                if let Some(m) = &node.machine {
                    if m.x() < lo - 1e-9 || m.x() > hi + 1e-9 {
                        audit.range_violations += 1;
                    }
                }
            }
        }
        engine.run_rounds(cfg.dissemination_rounds)?;
        let mut bits = engine
            .nodes()
            .iter()
            .enumerate()
            .filter(|&(v, node)| audited(cfg.mode, engine.crashed()[v], node))
            .map(|(_, node)| node.b);
        let shared = match bits.next() {
            Some(b0) => bits.all(|b| b == b0).then_some(b0),
            None => None,
        };
        if let Some(u) = unanimous {
            audit.unanimity_violations += engine
                .nodes()
                .iter()
                .enumerate()
                .filter(|&(v, node)| audited(cfg.mode, engine.crashed()[v], node) && node.b != u)
                .count();
        }
        match (audit.first_agreement, shared) {
            (None, Some(_)) => audit.first_agreement = Some(i),
            (Some(_), None) => audit.persistence_violations += 1,
            _ => {}
        }
    }
    engine.run_rounds(2)?;

    let nodes = engine.nodes();
    let faulted = engine.faulted().to_vec();
    let crashed = engine.crashed().to_vec();
    let decisions: Vec<u8> = nodes.iter().map(|x| x.b).collect();
    let mut correct = (0..n).filter(|&v| !faulted[v]).map(|v| decisions[v]);
    let first = correct.next();
    let agreed = first.is_none_or(|b| correct.all(|x| x == b));
    let valid = (0..n).filter(|&v| !faulted[v]).all(|v| spec.inputs.contains(&decisions[v]));
    let inquired: Vec<bool> = nodes.iter().map(|x| x.inquired).collect();
    let active_count = (0..n).filter(|&v| !crashed[v] && !inquired[v]).count();
    Ok(ConsensusRun {
        decided_value: if agreed { first } else { None },
        answered: nodes.iter().map(|x| x.answered).collect(),
        decisions,
        faulted,
        crashed,
        inquired,
        agreed,
        valid,
        active_count,
        metrics: engine.metrics(),
        audit,
        records: engine.take_records(),
    })
}
