use super::{LlbConfig, LlbMachine, NodeOutcome};
use crate::error::Result;
use crate::graph::Graph;
use crate::simnet::{
    build_adversary, digest_with, AdversaryConfig, Ctx, Engine, EngineConfig, FaultKind, Inbox, Metrics, Observation,
    Outgoing, Process, Recording, RoundRecord, Strategy, Topology, TraceMeta,
};
use std::hash::Hasher;

/// Standalone load-balancing node on a fixed topology (layer 0).
#[derive(Clone, Debug)]
pub struct LlbNode {
    pub machine: LlbMachine,
}

impl Process for LlbNode {
    type Msg = f64;

    fn send(&mut self, _ctx: &mut Ctx<'_>) -> Outgoing<f64> {
        match self.machine.outgoing() {
            Some(x) => Outgoing::Multicast { layer: 0, msg: x },
            None => Outgoing::Silent,
        }
    }

    fn receive(&mut self, inbox: &Inbox<'_, f64>, ctx: &mut Ctx<'_>) {
        self.machine.absorb(inbox.ports.iter().map(|d| (d.port, d.msg)), ctx.degree(0));
    }

    fn observe(&self) -> Observation {
        Observation { load: Some(self.machine.x()), stage: self.machine.stage() }
    }

    fn digest(&self) -> u64 {
        let m = &self.machine;
        digest_with(|h| {
            h.write_u64(m.x().to_bits());
            h.write_u8(m.status() as u8);
            h.write_usize(m.rounds_done());
        })
    }
}

#[derive(Clone, Debug)]
pub struct LlbSpec<'a> {
    pub graph: &'a Graph,
    pub x0: &'a [f64],
    pub cfg: LlbConfig,
    pub kind: FaultKind,
    pub strategy: Strategy,
    pub t: usize,
    pub seed: u64,
    pub recording: Recording,
    pub track_omissions: bool,
}

#[derive(Clone, Debug)]
pub struct LlbRun {
    pub outcomes: Vec<NodeOutcome>,
    pub x_tau1: Vec<f64>,
    pub omitted: Vec<usize>,
    pub faulted: Vec<bool>,
    pub crashed: Vec<bool>,
    pub metrics: Metrics,
    /// Round-0 header followed by one record per round; empty when not recording.
    pub records: Vec<RoundRecord>,
}

pub fn run_llb(spec: &LlbSpec<'_>) -> Result<LlbRun> {
    let g = spec.graph;
    let nodes: Vec<LlbNode> =
        spec.x0.iter().map(|&x| LlbNode { machine: LlbMachine::new(spec.cfg, x, spec.track_omissions) }).collect();
    let rounds = spec.cfg.tau1 + spec.cfg.tau2;
    let adversary = build_adversary(&AdversaryConfig {
        strategy: spec.strategy,
        budget: spec.t,
        horizon: rounds as u64,
        seed: spec.seed,
    });
    let ecfg = EngineConfig { seed: spec.seed, kind: spec.kind, budget: spec.t, recording: spec.recording };
    let mut engine = Engine::new(nodes, vec![Topology::from_graph(g)], adversary, &ecfg);
    let mut records = Vec::new();
    if spec.recording != Recording::Off {
        let full = spec.recording == Recording::Full;
        records.push(RoundRecord {
            round: 0,
            faulted: vec![],
            messages_sent: 0,
            messages_dropped: 0,
            per_node_digest: engine.digests(),
            heard: None,
            loads: full.then(|| engine.loads()),
            meta: Some(TraceMeta {
                protocol: "llb".into(),
                n: g.n(),
                kind: spec.kind,
                budget: spec.t,
                seed: spec.seed,
                d_min: spec.cfg.d_min,
                d_max: spec.cfg.d_max,
                tau1: spec.cfg.tau1,
                tau2: spec.cfg.tau2,
                edges: full.then(|| g.edges().collect()),
            }),
        });
    }
    engine.run_rounds(rounds)?;
    records.extend(engine.take_records());
    let nodes = engine.nodes();
    Ok(LlbRun {
        outcomes: nodes.iter().map(|p| p.machine.outcome()).collect(),
        x_tau1: nodes.iter().map(|p| p.machine.x_tau1()).collect(),
        omitted: nodes.iter().map(|p| p.machine.omitted()).collect(),
        faulted: engine.faulted().to_vec(),
        crashed: engine.crashed().to_vec(),
        metrics: engine.metrics(),
        records,
    })
}
