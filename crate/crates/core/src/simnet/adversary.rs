use super::{Adversary, Crash, DeliveryDecision, Drop, FaultKind, RoundView, Stage};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    #[default]
    None,
    CrashRandom,
    CrashTargetedExtreme,
    CrashEclipse,
    RandomDrops,
    PartitionFlicker,
    SilenceInbound,
}

impl Strategy {
    pub const CRASH: [Strategy; 3] = [Strategy::CrashRandom, Strategy::CrashTargetedExtreme, Strategy::CrashEclipse];
    pub const OMISSION: [Strategy; 3] = [Strategy::RandomDrops, Strategy::PartitionFlicker, Strategy::SilenceInbound];

    /// Fault model the strategy needs; `None` fits either.
    pub fn kind(self) -> Option<FaultKind> {
        match self {
            Strategy::None => None,
            Strategy::CrashRandom | Strategy::CrashTargetedExtreme | Strategy::CrashEclipse => Some(FaultKind::Crash),
            _ => Some(FaultKind::Omission),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::CrashRandom => "crash:random",
            Strategy::CrashTargetedExtreme => "crash:targeted_extreme",
            Strategy::CrashEclipse => "crash:eclipse",
            Strategy::RandomDrops => "omission:random_drops",
            Strategy::PartitionFlicker => "omission:partition_flicker",
            Strategy::SilenceInbound => "omission:silence_inbound",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            Strategy::None,
            Strategy::CrashRandom,
            Strategy::CrashTargetedExtreme,
            Strategy::CrashEclipse,
            Strategy::RandomDrops,
            Strategy::PartitionFlicker,
            Strategy::SilenceInbound,
        ];
        let s = s.trim();
        all.into_iter()
            .find(|st| st.name() == s || st.name().split(':').nth(1) == Some(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown adversary {s:?}")))
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_string()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdversaryConfig {
    pub strategy: Strategy,
    pub budget: usize,
    /// Faults are scheduled in rounds `1..=horizon`.
    pub horizon: u64,
    pub seed: u64,
}

pub fn build_adversary(cfg: &AdversaryConfig) -> Box<dyn Adversary> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let horizon = cfg.horizon.max(1);
    let mut schedule: Vec<u64> = (0..cfg.budget).map(|_| rng.gen_range(1..=horizon)).collect();
    schedule.sort_unstable();
    let timer = Schedule { rounds: schedule, next: 0, pending: 0 };
    match cfg.strategy {
        Strategy::None => Box::new(NoFaults),
        Strategy::CrashRandom => Box::new(CrashRandom { rng, timer, targeted: false }),
        Strategy::CrashTargetedExtreme => Box::new(CrashRandom { rng, timer, targeted: true }),
        Strategy::CrashEclipse => Box::new(Eclipse { rng, horizon, fired: false }),
        Strategy::RandomDrops => Box::new(Omitter { rng, timer, faulty: Vec::new(), style: OmitStyle::RandomDrops }),
        Strategy::SilenceInbound => Box::new(Omitter { rng, timer, faulty: Vec::new(), style: OmitStyle::SilenceInbound }),
        Strategy::PartitionFlicker => {
            let start = rng.gen_range(1..=horizon);
            Box::new(Flicker { rng, start, budget: cfg.budget, faulty: Vec::new(), member: Vec::new() })
        }
    }
}

pub struct NoFaults;

impl Adversary for NoFaults {
    fn decide(&mut self, _: &RoundView<'_>) -> DeliveryDecision {
        DeliveryDecision::default()
    }

    fn name(&self) -> String {
        Strategy::None.name().into()
    }
}

struct Schedule {
    rounds: Vec<u64>,
    next: usize,
    pending: usize,
}

impl Schedule {
    fn due(&mut self, round: u64, budget_left: usize) -> usize {
        while self.next < self.rounds.len() && self.rounds[self.next] <= round {
            self.pending += 1;
            self.next += 1;
        }
        self.pending.min(budget_left)
    }
}

fn random_half(rng: &mut ChaCha8Rng, targets: Vec<NodeId>) -> Vec<NodeId> {
    targets.into_iter().filter(|_| rng.gen_bool(0.5)).collect()
}

/// Crashes at uniformly scheduled rounds. The plain variant picks a uniform
/// live node; the targeted one picks the node whose load is farthest from the
/// mean observable load. The last messages reach a random half of the targets.
struct CrashRandom {
    rng: ChaCha8Rng,
    timer: Schedule,
    targeted: bool,
}

impl Adversary for CrashRandom {
    fn decide(&mut self, view: &RoundView<'_>) -> DeliveryDecision {
        let mut d = DeliveryDecision::default();
        let due = self.timer.due(view.round, view.remaining_budget());
        for _ in 0..due {
            let victim = if self.targeted {
                let loads: Vec<(NodeId, f64)> = view
                    .candidates()
                    .filter(|v| !d.newly_faulted.contains(v))
                    .filter_map(|v| view.observations[v].load.map(|x| (v, x)))
                    .collect();
                let live: Vec<f64> = (0..view.n).filter(|&v| view.is_live(v)).filter_map(|v| view.observations[v].load).collect();
                if loads.is_empty() || live.is_empty() {
                    break;
                }
                let mean = live.iter().sum::<f64>() / live.len() as f64;
                let mut best = loads[0];
                for &(v, x) in &loads[1..] {
                    if (x - mean).abs() > (best.1 - mean).abs() {
                        best = (v, x);
                    }
                }
                best.0
            } else {
                let pool: Vec<NodeId> = view.candidates().filter(|v| !d.newly_faulted.contains(v)).collect();
                match pool.choose(&mut self.rng) {
                    Some(&v) => v,
                    None => break,
                }
            };
            let deliver_to = random_half(&mut self.rng, view.targets(victim));
            d.newly_faulted.push(victim);
            d.crashes.push(Crash { node: victim, deliver_to });
        }
        self.timer.pending -= d.newly_faulted.len().min(self.timer.pending);
        d
    }

    fn name(&self) -> String {
        if self.targeted { Strategy::CrashTargetedExtreme } else { Strategy::CrashRandom }.name().into()
    }
}

/// Spends the whole budget at once on the neighbourhood of one node, the first
/// time any node reaches the outlier-fixing stage (or halfway through the
/// horizon), with nothing delivered from the crashing nodes.
struct Eclipse {
    rng: ChaCha8Rng,
    horizon: u64,
    fired: bool,
}

impl Adversary for Eclipse {
    fn decide(&mut self, view: &RoundView<'_>) -> DeliveryDecision {
        let mut d = DeliveryDecision::default();
        if self.fired || view.remaining_budget() == 0 {
            return d;
        }
        let fixing = (0..view.n).any(|v| view.is_live(v) && view.observations[v].stage == Stage::Fixing);
        if !fixing && view.round < self.horizon.div_ceil(2) {
            return d;
        }
        let senders: Vec<NodeId> = view.candidates().filter(|&v| view.is_sending(v)).collect();
        let Some(&victim) = senders.choose(&mut self.rng) else {
            return d;
        };
        let mut around: Vec<NodeId> = view.targets(victim).into_iter().filter(|&u| view.is_live(u) && !view.faulted[u]).collect();
        around.shuffle(&mut self.rng);
        around.truncate(view.remaining_budget());
        for u in around {
            d.newly_faulted.push(u);
            d.crashes.push(Crash { node: u, deliver_to: Vec::new() });
        }
        self.fired = true;
        d
    }

    fn name(&self) -> String {
        Strategy::CrashEclipse.name().into()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OmitStyle {
    RandomDrops,
    SilenceInbound,
}

/// Nodes turn faulty at scheduled rounds. Random drops lose each incident
/// message with probability 1/2; silence-inbound loses everything addressed
/// to the faulty node.
struct Omitter {
    rng: ChaCha8Rng,
    timer: Schedule,
    faulty: Vec<NodeId>,
    style: OmitStyle,
}

impl Adversary for Omitter {
    fn decide(&mut self, view: &RoundView<'_>) -> DeliveryDecision {
        let mut d = DeliveryDecision::default();
        let due = self.timer.due(view.round, view.remaining_budget());
        for _ in 0..due {
            let pool: Vec<NodeId> = view.candidates().filter(|v| !d.newly_faulted.contains(v)).collect();
            let Some(&v) = pool.choose(&mut self.rng) else { break };
            d.newly_faulted.push(v);
            self.faulty.push(v);
        }
        self.timer.pending -= d.newly_faulted.len().min(self.timer.pending);
        for &f in &self.faulty {
            match self.style {
                OmitStyle::SilenceInbound => d.drops.push(Drop::AllTo(f)),
                OmitStyle::RandomDrops => {
                    for u in view.targets(f) {
                        if self.rng.gen_bool(0.5) {
                            d.drops.push(Drop::Link { from: f, to: u });
                        }
                    }
                    for u in view.senders_to(f) {
                        if self.rng.gen_bool(0.5) {
                            d.drops.push(Drop::Link { from: u, to: f });
                        }
                    }
                }
            }
        }
        d
    }

    fn name(&self) -> String {
        match self.style {
            OmitStyle::RandomDrops => Strategy::RandomDrops,
            OmitStyle::SilenceInbound => Strategy::SilenceInbound,
        }
        .name()
        .into()
    }
}

/// At one scheduled round the whole budget turns faulty; from then on every
/// message crossing the cut between the faulty set and the rest is lost on
/// alternating rounds.
struct Flicker {
    rng: ChaCha8Rng,
    start: u64,
    budget: usize,
    faulty: Vec<NodeId>,
    member: Vec<bool>,
}

impl Adversary for Flicker {
    fn decide(&mut self, view: &RoundView<'_>) -> DeliveryDecision {
        let mut d = DeliveryDecision::default();
        if view.round == self.start {
            let mut pool: Vec<NodeId> = view.candidates().collect();
            pool.shuffle(&mut self.rng);
            pool.truncate(self.budget.min(view.remaining_budget()));
            pool.sort_unstable();
            self.member = vec![false; view.n];
            for &v in &pool {
                self.member[v] = true;
            }
            self.faulty = pool.clone();
            d.newly_faulted = pool;
        }
        if view.round >= self.start && (view.round - self.start) % 2 == 0 {
            for &f in &self.faulty {
                for u in view.targets(f) {
                    if !self.member[u] {
                        d.drops.push(Drop::Link { from: f, to: u });
                    }
                }
                for u in view.senders_to(f) {
                    if !self.member[u] {
                        d.drops.push(Drop::Link { from: u, to: f });
                    }
                }
            }
        }
        d
    }

    fn name(&self) -> String {
        Strategy::PartitionFlicker.name().into()
    }
}
