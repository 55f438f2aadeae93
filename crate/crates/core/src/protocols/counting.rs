use crate::error::Result;
use crate::graph::setgraph_density;
use crate::llb::{derive_config_clamped, LbStatus, LlbConfig, LlbMachine};
use crate::protocols::sample_targets;
use crate::simnet::{
    build_adversary, digest_with, AdversaryConfig, Ctx, Engine, EngineConfig, FaultKind, Inbox, Metrics, Observation,
    Outgoing, Process, Recording, RoundRecord, Stage, Strategy, Topology,
};
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

/// Degree window used by counting: `d_min = 3/4 q (n-1)`, `d_max = 5/4 d_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingConfig {
    pub n: usize,
    pub c2: f64,
    pub q: f64,
    pub p: f64,
    pub llb: LlbConfig,
}

pub fn counting_config(n: usize, c2: f64) -> Result<CountingConfig> {
    let (q, p) = setgraph_density(n, c2)?;
    let d_min = 0.75 * q * (n as f64 - 1.0);
    let llb = derive_config_clamped(n, d_min, 1.25 * d_min)?;
    Ok(CountingConfig { n, c2, q, p, llb })
}

#[derive(Clone, Debug)]
enum Phase {
    Sampling,
    Balancing(LlbMachine),
}

#[derive(Clone, Debug)]
struct CountingNode {
    cfg: CountingConfig,
    flag: bool,
    phase: Phase,
}

impl CountingNode {
    fn estimate(&self) -> Option<u64> {
        match &self.phase {
            Phase::Balancing(m) if m.is_done() && m.status() == LbStatus::Active => {
                Some((self.cfg.n as f64 * m.x()).round_ties_even().max(0.0) as u64)
            }
            _ => None,
        }
    }
}

impl Process for CountingNode {
    type Msg = f64;

    fn send(&mut self, ctx: &mut Ctx<'_>) -> Outgoing<f64> {
        match &self.phase {
            Phase::Sampling => Outgoing::Sample { layer: 0, targets: sample_targets(ctx.n, ctx.id, self.cfg.p, ctx.rng), msg: 0.0 },
            Phase::Balancing(m) => match m.outgoing() {
                Some(x) => Outgoing::Multicast { layer: 0, msg: x },
                None => Outgoing::Silent,
            },
        }
    }

    fn receive(&mut self, inbox: &Inbox<'_, f64>, ctx: &mut Ctx<'_>) {
        match &mut self.phase {
            Phase::Sampling => {
                self.phase = Phase::Balancing(LlbMachine::new(self.cfg.llb, self.flag as u8 as f64, false));
            }
            Phase::Balancing(m) => m.absorb(inbox.ports.iter().map(|d| (d.port, d.msg)), ctx.degree(0)),
        }
    }

    fn observe(&self) -> Observation {
        match &self.phase {
            Phase::Sampling => Observation { load: None, stage: Stage::Sampling },
            Phase::Balancing(m) => Observation { load: Some(m.x()), stage: m.stage() },
        }
    }

    fn digest(&self) -> u64 {
        digest_with(|h| {
            h.write_u8(self.flag as u8);
            if let Phase::Balancing(m) = &self.phase {
                h.write_u64(m.x().to_bits());
                h.write_u8(m.status() as u8);
                h.write_usize(m.rounds_done());
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct CountingSpec<'a> {
    pub cfg: CountingConfig,
    pub flags: &'a [bool],
    pub kind: FaultKind,
    pub strategy: Strategy,
    pub t: usize,
    pub seed: u64,
    pub recording: Recording,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountingRun {
    pub truth: usize,
    /// `None` for nodes that ended silent or crashed.
    pub estimates: Vec<Option<u64>>,
    pub faulted: Vec<bool>,
    pub metrics: Metrics,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
}

impl CountingRun {
    /// Non-faulty nodes that returned an estimate.
    pub fn reporting(&self) -> usize {
        (0..self.estimates.len()).filter(|&v| !self.faulted[v] && self.estimates[v].is_some()).count()
    }

    /// Largest `|estimate - truth|` over non-faulty reporting nodes.
    pub fn max_error(&self) -> u64 {
        (0..self.estimates.len())
            .filter(|&v| !self.faulted[v])
            .filter_map(|v| self.estimates[v])
            .map(|e| e.abs_diff(self.truth as u64))
            .max()
            .unwrap_or(0)
    }
}

pub fn run_counting(spec: &CountingSpec<'_>) -> Result<CountingRun> {
    let cfg = spec.cfg;
    let nodes: Vec<CountingNode> = spec.flags.iter().map(|&flag| CountingNode { cfg, flag, phase: Phase::Sampling }).collect();
    let rounds = 1 + cfg.llb.tau1 + cfg.llb.tau2;
    let adversary = build_adversary(&AdversaryConfig { strategy: spec.strategy, budget: spec.t, horizon: rounds as u64, seed: spec.seed });
    let ecfg = EngineConfig { seed: spec.seed, kind: spec.kind, budget: spec.t, recording: spec.recording };
    let mut engine = Engine::new(nodes, vec![Topology::default()], adversary, &ecfg);
    engine.run_rounds(rounds)?;
    let estimates = engine.nodes().iter().enumerate().map(|(v, p)| if engine.crashed()[v] { None } else { p.estimate() }).collect();
    let truth = spec.flags.iter().filter(|&&f| f).count();
    Ok(CountingRun { truth, estimates, faulted: engine.faulted().to_vec(), metrics: engine.metrics(), records: engine.take_records() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_free_counting_is_exact() {
        let cfg = counting_config(128, 4.0).unwrap();
        let flags: Vec<bool> = (0..128).map(|v| v % 3 == 0).collect();
        let spec = CountingSpec { cfg, flags: &flags, kind: FaultKind::Crash, strategy: Strategy::None, t: 0, seed: 1, recording: Recording::Off };
        let run = run_counting(&spec).unwrap();
        assert_eq!(run.truth, 43);
        assert_eq!(run.reporting(), 128);
        assert_eq!(run.max_error(), 0);
    }

    #[test]
    fn config_window() {
        let c = counting_config(256, 8.0).unwrap();
        let d_min = 0.75 * c.q * 255.0;
        assert!((c.llb.d_min - d_min).abs() < 1e-12 && (c.llb.d_max - 1.25 * d_min).abs() < 1e-12);
        assert!(counting_config(64, 8.0).is_err());
    }
}
