//! Round-synchronous message-passing engine with an adaptive, full-information
//! adversary that may crash nodes or drop messages incident to faulty nodes.
//!
//! A round runs in four phases: every live node produces its outgoing
//! messages, the adversary inspects states and messages and returns a
//! [`DeliveryDecision`], the engine delivers what survives, and receivers
//! advance their state. Receivers see port indices, never sender identities,
//! except for engine-mediated direct messages.

mod adversary;
mod topology;
mod trace;

pub use adversary::{build_adversary, AdversaryConfig, NoFaults, Strategy};
pub use topology::{LayerId, Topology};
pub use trace::{read_trace, validate_causality, write_trace, RoundRecord, TraceMeta};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use fnv::{FnvHashSet, FnvHasher};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

/// Bits charged per message.
pub const MESSAGE_BITS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Crash,
    Omission,
}

/// What a node does in the send phase.
#[derive(Clone, Debug)]
pub enum Outgoing<M> {
    Silent,
    /// One copy on every port of the given layer.
    Multicast { layer: LayerId, msg: M },
    /// Engine-mediated messages addressed by node id.
    Direct(Vec<(NodeId, M)>),
    /// Graph-sampling handshake. After delivery the layer is rebuilt: each
    /// participant's ports are its accepted targets plus every participant
    /// whose handshake reached it. Targets that do not take part are refused.
    Sample { layer: LayerId, targets: Vec<NodeId>, msg: M },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delivery<M> {
    pub layer: LayerId,
    pub port: u32,
    pub msg: M,
}

/// Messages delivered to one node in one round.
#[derive(Clone, Copy)]
pub struct Inbox<'a, M> {
    /// Port messages, ordered by layer then port.
    pub ports: Ports<'a, M>,
    /// Direct and handshake messages, ordered by sender id.
    pub direct: &'a [(NodeId, M)],
}

impl<M: Copy> Inbox<'_, M> {
    pub fn len(&self) -> usize {
        self.ports.len() + self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Port messages of one round. Either a materialized list or, when nothing
/// was filtered, a view over the senders' outgoing messages.
#[derive(Clone, Copy)]
pub struct Ports<'a, M> {
    repr: PortsRepr<'a, M>,
}

#[derive(Clone, Copy)]
enum PortsRepr<'a, M> {
    Slice(&'a [Delivery<M>]),
    Gather { layer: LayerId, len: usize, live: &'a [(u32, u32)], sent_layer: &'a [LayerId], sent_msg: &'a [M] },
}

impl<'a, M: Copy> Ports<'a, M> {
    pub fn from_slice(d: &'a [Delivery<M>]) -> Self {
        Ports { repr: PortsRepr::Slice(d) }
    }

    pub fn len(&self) -> usize {
        match self.repr {
            PortsRepr::Slice(d) => d.len(),
            PortsRepr::Gather { len, .. } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> PortIter<'a, M> {
        PortIter {
            repr: match self.repr {
                PortsRepr::Slice(d) => IterRepr::Slice(d.iter()),
                PortsRepr::Gather { layer, len, live, sent_layer, sent_msg } => {
                    IterRepr::Gather { layer, live: live.iter(), sent_layer, sent_msg, all: len == live.len() }
                }
            },
        }
    }

    pub fn to_vec(&self) -> Vec<Delivery<M>> {
        self.iter().collect()
    }
}

#[derive(Clone)]
pub struct PortIter<'a, M> {
    repr: IterRepr<'a, M>,
}

#[derive(Clone)]
enum IterRepr<'a, M> {
    Slice(std::slice::Iter<'a, Delivery<M>>),
    // `all`: every live neighbour sent on `layer`
    Gather { layer: LayerId, live: std::slice::Iter<'a, (u32, u32)>, sent_layer: &'a [LayerId], sent_msg: &'a [M], all: bool },
}

impl<M: Copy> Iterator for PortIter<'_, M> {
    type Item = Delivery<M>;

    fn next(&mut self) -> Option<Delivery<M>> {
        match &mut self.repr {
            IterRepr::Slice(it) => it.next().copied(),
            IterRepr::Gather { layer, live, sent_layer, sent_msg, .. } => {
                for &(u, k) in live.by_ref() {
                    if sent_layer[u as usize] == *layer {
                        return Some(Delivery { layer: *layer, port: k, msg: sent_msg[u as usize] });
                    }
                }
                None
            }
        }
    }

    fn fold<B, F: FnMut(B, Delivery<M>) -> B>(self, init: B, mut f: F) -> B {
        match self.repr {
            IterRepr::Slice(it) => it.fold(init, |acc, d| f(acc, *d)),
            IterRepr::Gather { layer, live, sent_layer, sent_msg, all } => {
                if all {
                    debug_assert!(live.clone().all(|&(u, _)| (u as usize) < sent_msg.len()));
                    // SAFETY: live ports only name nodes of the topology, and
                    // `sent_msg` holds one entry per node
                    live.fold(init, |acc, &(u, k)| f(acc, Delivery { layer, port: k, msg: unsafe { *sent_msg.get_unchecked(u as usize) } }))
                } else {
                    live.fold(init, |acc, &(u, k)| {
                        if sent_layer[u as usize] == layer {
                            f(acc, Delivery { layer, port: k, msg: sent_msg[u as usize] })
                        } else {
                            acc
                        }
                    })
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Idle,
    Sampling,
    Balancing,
    Fixing,
    Disseminating,
    Inquiry,
    Done,
}

/// State summary exposed to adversaries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Observation {
    pub load: Option<f64>,
    pub stage: Stage,
}

pub struct Ctx<'a> {
    pub id: NodeId,
    pub n: usize,
    pub round: u64,
    pub rng: &'a mut ChaCha8Rng,
    layers: &'a [Topology],
}

impl Ctx<'_> {
    pub fn degree(&self, layer: LayerId) -> usize {
        self.layers.get(layer as usize).filter(|t| t.n() > 0).map_or(0, |t| t.degree(self.id))
    }
}

pub trait Process {
    type Msg: Copy;

    fn send(&mut self, ctx: &mut Ctx<'_>) -> Outgoing<Self::Msg>;
    fn receive(&mut self, inbox: &Inbox<'_, Self::Msg>, ctx: &mut Ctx<'_>);
    fn observe(&self) -> Observation;
    fn digest(&self) -> u64;
}

/// FNV-1a digest helper for [`Process::digest`].
pub fn digest_with(f: impl FnOnce(&mut FnvHasher)) -> u64 {
    let mut h = FnvHasher::default();
    f(&mut h);
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Crash {
    pub node: NodeId,
    /// Recipients that still get the crashing node's last messages.
    pub deliver_to: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drop {
    Link { from: NodeId, to: NodeId },
    AllFrom(NodeId),
    AllTo(NodeId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeliveryDecision {
    pub newly_faulted: Vec<NodeId>,
    pub crashes: Vec<Crash>,
    pub drops: Vec<Drop>,
}

impl DeliveryDecision {
    pub fn is_empty(&self) -> bool {
        self.newly_faulted.is_empty() && self.crashes.is_empty() && self.drops.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Silent,
    Multicast(LayerId),
    Direct { start: usize, len: usize },
    Sample { layer: LayerId, start: usize, len: usize },
}

/// Everything the adversary may look at in phase 2.
pub struct RoundView<'a> {
    pub round: u64,
    pub n: usize,
    pub kind: FaultKind,
    pub budget: usize,
    pub faulted: &'a [bool],
    pub crashed: &'a [bool],
    pub observations: &'a [Observation],
    shapes: &'a [Shape],
    targets: &'a [NodeId],
    layers: &'a [Topology],
    fault_count: usize,
}

impl RoundView<'_> {
    pub fn remaining_budget(&self) -> usize {
        self.budget - self.fault_count
    }

    pub fn is_live(&self, v: NodeId) -> bool {
        !self.crashed[v]
    }

    pub fn is_sending(&self, v: NodeId) -> bool {
        self.shapes[v] != Shape::Silent
    }

    /// Live nodes that are not yet faulty.
    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n).filter(|&v| !self.crashed[v] && !self.faulted[v])
    }

    /// Intended recipients of `v`'s messages this round.
    pub fn targets(&self, v: NodeId) -> Vec<NodeId> {
        match self.shapes[v] {
            Shape::Silent => Vec::new(),
            Shape::Multicast(l) => self.layers[l as usize].ports(v).iter().map(|&u| u as NodeId).collect(),
            Shape::Direct { start, len } | Shape::Sample { start, len, .. } => self.targets[start..start + len].to_vec(),
        }
    }

    /// Nodes whose messages would reach `v` this round absent faults.
    pub fn senders_to(&self, v: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        for (l, topo) in self.layers.iter().enumerate() {
            if topo.n() == 0 {
                continue;
            }
            for (k, &u) in topo.ports(v).iter().enumerate() {
                if topo.reciprocal(v, k) && self.shapes[u as usize] == Shape::Multicast(l as LayerId) {
                    out.push(u as NodeId);
                }
            }
        }
        for (u, s) in self.shapes.iter().enumerate() {
            if let Shape::Direct { start, len } | Shape::Sample { start, len, .. } = *s {
                if self.targets[start..start + len].contains(&v) {
                    out.push(u);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub trait Adversary: Send {
    fn decide(&mut self, view: &RoundView<'_>) -> DeliveryDecision;
    fn name(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recording {
    Off,
    /// Round summaries with digests.
    Digests,
    /// Digests plus per-node heard sets and loads.
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub rounds: u64,
    pub messages: u64,
    pub delivered: u64,
}

impl Metrics {
    pub fn bits(&self) -> u64 {
        self.messages * MESSAGE_BITS
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub seed: u64,
    pub kind: FaultKind,
    pub budget: usize,
    pub recording: Recording,
}

const NO_LAYER: LayerId = LayerId::MAX;

pub struct Engine<P: Process> {
    n: usize,
    round: u64,
    nodes: Vec<P>,
    rngs: Vec<ChaCha8Rng>,
    layers: Vec<Topology>,
    adversary: Box<dyn Adversary>,
    kind: FaultKind,
    budget: usize,
    faulted: Vec<bool>,
    fault_count: usize,
    crashed: Vec<bool>,
    crash_round: Vec<Option<u64>>,
    metrics: Metrics,
    recording: Recording,
    records: Vec<RoundRecord>,
    // per-round scratch
    outgoing: Vec<Outgoing<P::Msg>>,
    shapes: Vec<Shape>,
    targets: Vec<NodeId>,
    observations: Vec<Observation>,
    sent_layer: Vec<LayerId>,
    // filled with the first multicast message seen; only read where sent_layer matches
    sent_msg: Vec<P::Msg>,
    filtered: Vec<bool>,
    blocked_in: Vec<bool>,
    crashing: Vec<bool>,
    partial: FnvHashSet<u64>,
    partial_from: Vec<bool>,
    link_drops: FnvHashSet<u64>,
    touched: Vec<NodeId>,
    direct: Vec<(NodeId, NodeId, P::Msg)>,
    direct_buf: Vec<(NodeId, NodeId, P::Msg)>,
    bucket: Vec<usize>,
    inbox: Vec<Delivery<P::Msg>>,
    missing: Vec<u32>,
    direct_inbox: Vec<(NodeId, P::Msg)>,
    sample_layers: Vec<LayerId>,
    multicast_layers: Vec<LayerId>,
}

impl<P: Process> Engine<P> {
    pub fn new(nodes: Vec<P>, layers: Vec<Topology>, adversary: Box<dyn Adversary>, cfg: &EngineConfig) -> Self {
        let n = nodes.len();
        for t in &layers {
            assert!(t.n() == n || t.n() == 0, "layer size {} does not match {n} nodes", t.n());
        }
        let rngs = (0..n)
            .map(|v| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(v as u64);
                r
            })
            .collect();
        Engine {
            n,
            round: 0,
            nodes,
            rngs,
            layers,
            adversary,
            kind: cfg.kind,
            budget: cfg.budget,
            faulted: vec![false; n],
            fault_count: 0,
            crashed: vec![false; n],
            crash_round: vec![None; n],
            metrics: Metrics::default(),
            recording: cfg.recording,
            records: Vec::new(),
            outgoing: Vec::with_capacity(n),
            shapes: vec![Shape::Silent; n],
            targets: Vec::new(),
            observations: vec![Observation::default(); n],
            sent_layer: vec![NO_LAYER; n],
            sent_msg: Vec::new(),
            filtered: vec![false; n],
            blocked_in: vec![false; n],
            crashing: vec![false; n],
            partial: FnvHashSet::default(),
            partial_from: vec![false; n],
            link_drops: FnvHashSet::default(),
            touched: Vec::new(),
            direct: Vec::new(),
            direct_buf: Vec::new(),
            bucket: Vec::new(),
            inbox: Vec::new(),
            missing: vec![0; n],
            direct_inbox: Vec::new(),
            sample_layers: Vec::new(),
            multicast_layers: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn nodes(&self) -> &[P] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<P> {
        self.nodes
    }

    pub fn layer(&self, l: LayerId) -> &Topology {
        &self.layers[l as usize]
    }

    pub fn faulted(&self) -> &[bool] {
        &self.faulted
    }

    pub fn crashed(&self) -> &[bool] {
        &self.crashed
    }

    pub fn crash_round(&self, v: NodeId) -> Option<u64> {
        self.crash_round[v]
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<RoundRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn digests(&self) -> Vec<u64> {
        self.nodes.iter().map(Process::digest).collect()
    }

    pub fn loads(&self) -> Vec<Option<f64>> {
        self.nodes.iter().map(|p| p.observe().load).collect()
    }

    fn key(&self, from: NodeId, to: NodeId) -> u64 {
        (from as u64) * self.n as u64 + to as u64
    }

    pub fn run_rounds(&mut self, k: usize) -> Result<()> {
        for _ in 0..k {
            self.run_round()?;
        }
        Ok(())
    }

    pub fn run_round(&mut self) -> Result<()> {
        self.round += 1;
        let round = self.round;
        let n = self.n;

        // phase 1: send
        self.outgoing.clear();
        self.targets.clear();
        for v in 0..n {
            let out = if self.crashed[v] {
                Outgoing::Silent
            } else {
                let mut ctx = Ctx { id: v, n, round, rng: &mut self.rngs[v], layers: &self.layers };
                self.nodes[v].send(&mut ctx)
            };
            self.outgoing.push(out);
            self.observations[v] = self.nodes[v].observe();
        }
        let mut sample_layers = std::mem::take(&mut self.sample_layers);
        sample_layers.clear();
        for out in &self.outgoing {
            if let Outgoing::Sample { layer, .. } = out {
                if !sample_layers.contains(layer) {
                    sample_layers.push(*layer);
                }
            }
        }
        let participant = |outgoing: &[Outgoing<P::Msg>], u: NodeId, l: LayerId| {
            matches!(&outgoing[u], Outgoing::Sample { layer, .. } if *layer == l)
        };
        let mut multicast_layers = std::mem::take(&mut self.multicast_layers);
        multicast_layers.clear();
        for v in 0..n {
            let shape = match &self.outgoing[v] {
                Outgoing::Silent => Shape::Silent,
                Outgoing::Multicast { layer, .. } => {
                    if !multicast_layers.contains(layer) {
                        multicast_layers.push(*layer);
                    }
                    Shape::Multicast(*layer)
                }
                Outgoing::Direct(list) => {
                    let start = self.targets.len();
                    self.targets.extend(list.iter().map(|&(u, _)| u).filter(|&u| u < n && u != v));
                    Shape::Direct { start, len: self.targets.len() - start }
                }
                Outgoing::Sample { layer, targets, .. } => {
                    let start = self.targets.len();
                    for &u in targets {
                        if u < n && u != v && participant(&self.outgoing, u, *layer) {
                            self.targets.push(u);
                        }
                    }
                    let s = &mut self.targets[start..];
                    s.sort_unstable();
                    let len = dedup_sorted(s);
                    self.targets.truncate(start + len);
                    Shape::Sample { layer: *layer, start, len }
                }
            };
            self.shapes[v] = shape;
        }

        // phase 2: adversary
        let decision = {
            let view = RoundView {
                round,
                n,
                kind: self.kind,
                budget: self.budget,
                faulted: &self.faulted,
                crashed: &self.crashed,
                observations: &self.observations,
                shapes: &self.shapes,
                targets: &self.targets,
                layers: &self.layers,
                fault_count: self.fault_count,
            };
            self.adversary.decide(&view)
        };
        self.apply_decision(&decision)?;

        // phase 3: delivery bookkeeping
        let mut sent_count = 0u64;
        for v in 0..n {
            self.sent_layer[v] = NO_LAYER;
            match (&self.outgoing[v], self.shapes[v]) {
                (Outgoing::Multicast { layer, msg }, _) => {
                    let deg = self.layers.get(*layer as usize).map_or(0, |t| if t.n() == 0 { 0 } else { t.degree(v) });
                    sent_count += deg as u64;
                    if deg > 0 {
                        if self.sent_msg.is_empty() {
                            self.sent_msg = vec![*msg; n];
                        }
                        self.sent_layer[v] = *layer;
                        self.sent_msg[v] = *msg;
                    }
                }
                (_, Shape::Direct { len, .. }) | (_, Shape::Sample { len, .. }) => sent_count += len as u64,
                _ => {}
            }
        }
        self.direct.clear();
        let mut new_ports: Vec<(LayerId, Vec<Vec<u32>>)> =
            sample_layers.iter().map(|&l| (l, vec![Vec::new(); n])).collect();
        for v in 0..n {
            match (&self.outgoing[v], self.shapes[v]) {
                (Outgoing::Direct(list), Shape::Direct { .. }) => {
                    for &(u, msg) in list {
                        if u < n && u != v && self.permitted(v, u) {
                            self.direct.push((u, v, msg));
                        }
                    }
                }
                (Outgoing::Sample { msg, .. }, Shape::Sample { layer, start, len }) => {
                    let ports = &mut new_ports.iter_mut().find(|(l, _)| *l == layer).unwrap().1;
                    for i in start..start + len {
                        let u = self.targets[i];
                        ports[v].push(u as u32);
                        if self.permitted(v, u) {
                            ports[u].push(v as u32);
                            self.direct.push((u, v, *msg));
                        }
                    }
                }
                _ => {}
            }
        }
        for (l, ports) in new_ports {
            let idx = l as usize;
            if self.layers.len() <= idx {
                self.layers.resize_with(idx + 1, Topology::default);
            }
            self.layers[idx] = Topology::from_ports(ports);
        }
        // senders were visited in order, so a stable bucket pass by receiver
        // leaves each inbox sorted by sender
        if !self.direct.is_empty() {
            self.bucket.clear();
            self.bucket.resize(n + 1, 0);
            for &(to, _, _) in &self.direct {
                self.bucket[to + 1] += 1;
            }
            for i in 0..n {
                self.bucket[i + 1] += self.bucket[i];
            }
            self.direct_buf.clear();
            self.direct_buf.resize(self.direct.len(), self.direct[0]);
            for &e in &self.direct {
                let slot = &mut self.bucket[e.0];
                self.direct_buf[*slot] = e;
                *slot += 1;
            }
            std::mem::swap(&mut self.direct, &mut self.direct_buf);
        }

        // live neighbours that do not multicast on the single multicast layer
        self.missing.fill(0);
        if let [l] = multicast_layers[..] {
            let topo = &self.layers[l as usize];
            if topo.n() > 0 {
                for u in 0..n {
                    if self.sent_layer[u] != l {
                        for &(w, _) in topo.live(u) {
                            self.missing[w as usize] += 1;
                        }
                    }
                }
            }
        }

        // phase 4: receive
        let full = self.recording == Recording::Full;
        let mut heard_all: Vec<Vec<NodeId>> = if full { vec![Vec::new(); n] } else { Vec::new() };
        let any_filter = !self.touched.is_empty();
        let mut delivered = 0u64;
        let mut d_idx = 0usize;
        for v in 0..n {
            let d_start = d_idx;
            while d_idx < self.direct.len() && self.direct[d_idx].0 == v {
                d_idx += 1;
            }
            if self.crashed[v] || self.crashing[v] {
                continue;
            }
            self.direct_inbox.clear();
            if !self.blocked_in[v] {
                self.direct_inbox.extend(self.direct[d_start..d_idx].iter().map(|&(_, from, m)| (from, m)));
            }
            let gather = !self.blocked_in[v] && !any_filter && multicast_layers.len() == 1 && !self.sent_msg.is_empty();
            let ports = if gather {
                let l = multicast_layers[0];
                let topo = &self.layers[l as usize];
                let live = if topo.n() == 0 { &[][..] } else { topo.live(v) };
                let len = live.len() - self.missing[v] as usize;
                Ports { repr: PortsRepr::Gather { layer: l, len, live, sent_layer: &self.sent_layer, sent_msg: &self.sent_msg } }
            } else {
                self.inbox.clear();
                if !self.blocked_in[v] && !self.sent_msg.is_empty() {
                    for &l in &multicast_layers {
                        let topo = &self.layers[l as usize];
                        if topo.n() == 0 {
                            continue;
                        }
                        for &(u, k) in topo.live(v) {
                            let u = u as usize;
                            if self.sent_layer[u] == l && (!self.filtered[u] || self.permitted(u, v)) {
                                self.inbox.push(Delivery { layer: l, port: k, msg: self.sent_msg[u] });
                            }
                        }
                    }
                }
                Ports::from_slice(&self.inbox)
            };
            delivered += (ports.len() + self.direct_inbox.len()) as u64;
            if full {
                let h = &mut heard_all[v];
                for d in ports.iter() {
                    h.push(self.layers[d.layer as usize].ports(v)[d.port as usize] as NodeId);
                }
                h.extend(self.direct_inbox.iter().map(|&(u, _)| u));
                h.sort_unstable();
            }
            let inbox = Inbox { ports, direct: &self.direct_inbox };
            let mut ctx = Ctx { id: v, n, round, rng: &mut self.rngs[v], layers: &self.layers };
            self.nodes[v].receive(&inbox, &mut ctx);
        }

        let mut faulted_now = decision.newly_faulted.clone();
        faulted_now.sort_unstable();
        for c in &decision.crashes {
            self.crashed[c.node] = true;
            self.crash_round[c.node] = Some(round);
        }
        if !decision.crashes.is_empty() {
            for t in &mut self.layers {
                if t.n() > 0 {
                    t.prune_live(&self.crashed);
                }
            }
        }
        self.clear_filters();
        self.sample_layers = sample_layers;
        self.multicast_layers = multicast_layers;

        self.metrics.rounds += 1;
        self.metrics.messages += sent_count;
        self.metrics.delivered += delivered;
        if self.recording != Recording::Off {
            self.records.push(RoundRecord {
                round,
                faulted: faulted_now,
                messages_sent: sent_count,
                messages_dropped: sent_count - delivered,
                per_node_digest: self.digests(),
                heard: full.then_some(heard_all),
                loads: full.then(|| self.loads()),
                meta: None,
            });
        }
        Ok(())
    }

    fn permitted(&self, from: NodeId, to: NodeId) -> bool {
        if self.blocked_in[to] || self.crashing[to] {
            return false;
        }
        if !self.filtered[from] {
            return true;
        }
        let key = self.key(from, to);
        if self.partial_from[from] {
            return self.partial.contains(&key);
        }
        !self.link_drops.contains(&key) && !self.link_drops.contains(&(u64::MAX - from as u64))
    }

    fn apply_decision(&mut self, d: &DeliveryDecision) -> Result<()> {
        let round = self.round;
        let bad = |reason: String| Err(Error::InvalidDecision { round, reason });
        let mut fresh = d.newly_faulted.clone();
        fresh.sort_unstable();
        if fresh.windows(2).any(|w| w[0] == w[1]) {
            return bad("node faulted twice".into());
        }
        for &v in &fresh {
            if v >= self.n || self.faulted[v] {
                return bad(format!("node {v} is out of range or already faulty"));
            }
        }
        if self.fault_count + fresh.len() > self.budget {
            return Err(Error::BudgetExceeded { budget: self.budget, requested: self.fault_count + fresh.len() });
        }
        match self.kind {
            FaultKind::Crash => {
                if !d.drops.is_empty() {
                    return bad("message drops are not allowed under crash faults".into());
                }
                let mut crashed: Vec<NodeId> = d.crashes.iter().map(|c| c.node).collect();
                crashed.sort_unstable();
                if crashed != fresh {
                    return bad("crashed nodes must be exactly the newly faulted nodes".into());
                }
            }
            FaultKind::Omission => {
                if !d.crashes.is_empty() {
                    return bad("crashes are not allowed under omission faults".into());
                }
                let faulty = |v: NodeId| v < self.n && (self.faulted[v] || fresh.binary_search(&v).is_ok());
                for drop in &d.drops {
                    let ok = match *drop {
                        Drop::Link { from, to } => to < self.n && from < self.n && (faulty(from) || faulty(to)),
                        Drop::AllFrom(v) | Drop::AllTo(v) => faulty(v),
                    };
                    if !ok {
                        return bad(format!("{drop:?} is not incident to a faulty node"));
                    }
                }
            }
        }
        for &v in &fresh {
            self.faulted[v] = true;
        }
        self.fault_count += fresh.len();

        for c in &d.crashes {
            let v = c.node;
            self.crashing[v] = true;
            self.touched.push(v);
            let targets: FnvHashSet<NodeId> = self.view_targets(v).into_iter().collect();
            if c.deliver_to.iter().all(|u| targets.contains(u)) && c.deliver_to.len() == targets.len() {
                continue;
            }
            self.filtered[v] = true;
            self.partial_from[v] = true;
            for &u in &c.deliver_to {
                let key = self.key(v, u);
                self.partial.insert(key);
            }
        }
        for drop in &d.drops {
            match *drop {
                Drop::Link { from, to } => {
                    self.filtered[from] = true;
                    self.touched.push(from);
                    let key = self.key(from, to);
                    self.link_drops.insert(key);
                }
                Drop::AllFrom(v) => {
                    self.filtered[v] = true;
                    self.touched.push(v);
                    self.link_drops.insert(u64::MAX - v as u64);
                }
                Drop::AllTo(v) => {
                    self.blocked_in[v] = true;
                    self.touched.push(v);
                }
            }
        }
        Ok(())
    }

    fn view_targets(&self, v: NodeId) -> Vec<NodeId> {
        match self.shapes[v] {
            Shape::Silent => Vec::new(),
            Shape::Multicast(l) => self.layers[l as usize].ports(v).iter().map(|&u| u as NodeId).collect(),
            Shape::Direct { start, len } | Shape::Sample { start, len, .. } => self.targets[start..start + len].to_vec(),
        }
    }

    fn clear_filters(&mut self) {
        for &v in &self.touched {
            self.filtered[v] = false;
            self.partial_from[v] = false;
            self.blocked_in[v] = false;
            self.crashing[v] = false;
        }
        self.touched.clear();
        self.partial.clear();
        self.link_drops.clear();
    }
}

fn dedup_sorted(s: &mut [NodeId]) -> usize {
    if s.is_empty() {
        return 0;
    }
    let mut w = 1;
    for r in 1..s.len() {
        if s[r] != s[w - 1] {
            s[w] = s[r];
            w += 1;
        }
    }
    w
}
