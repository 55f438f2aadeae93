use crate::graph::{Graph, NodeId};

pub type LayerId = u8;

/// Per-node sorted port lists in CSR form. A port `k` of `v` leading to `u` is
/// reciprocal when `v` is also one of `u`'s ports; only reciprocal ports carry
/// messages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    offsets: Vec<usize>,
    ports: Vec<u32>,
    recip: Vec<bool>,
    // reciprocal ports only, as (neighbour, port index)
    live_offsets: Vec<usize>,
    live: Vec<(u32, u32)>,
}

impl Topology {
    pub fn from_graph(g: &Graph) -> Self {
        Self::from_ports(g.adjacency().iter().map(|l| l.iter().map(|&u| u as u32).collect()).collect())
    }

    pub fn from_ports(mut lists: Vec<Vec<u32>>) -> Self {
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        for l in &lists {
            offsets.push(offsets.last().unwrap() + l.len());
        }
        let mut ports = Vec::with_capacity(*offsets.last().unwrap());
        let mut recip = Vec::with_capacity(ports.capacity());
        let mut live_offsets = Vec::with_capacity(lists.len() + 1);
        let mut live = Vec::with_capacity(ports.capacity());
        live_offsets.push(0);
        for (v, l) in lists.iter().enumerate() {
            for (k, &u) in l.iter().enumerate() {
                let ok = lists[u as usize].binary_search(&(v as u32)).is_ok();
                ports.push(u);
                recip.push(ok);
                if ok {
                    live.push((u, k as u32));
                }
            }
            live_offsets.push(live.len());
        }
        Topology { offsets, ports, recip, live_offsets, live }
    }

    pub fn n(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn ports(&self, v: NodeId) -> &[u32] {
        &self.ports[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn reciprocal(&self, v: NodeId, k: usize) -> bool {
        self.recip[self.offsets[v] + k]
    }

    /// Reciprocal ports of `v` whose far end has not been pruned.
    pub(crate) fn live(&self, v: NodeId) -> &[(u32, u32)] {
        &self.live[self.live_offsets[v]..self.live_offsets[v + 1]]
    }

    /// Drops every live port touching a dead node. Port numbering is kept.
    pub(crate) fn prune_live(&mut self, dead: &[bool]) {
        let mut w = 0;
        let mut start = self.live_offsets[0];
        for v in 0..self.n() {
            let end = self.live_offsets[v + 1];
            self.live_offsets[v] = w;
            if !dead[v] {
                for i in start..end {
                    let e = self.live[i];
                    if !dead[e.0 as usize] {
                        self.live[w] = e;
                        w += 1;
                    }
                }
            }
            start = end;
        }
        let n = self.n();
        self.live_offsets[n] = w;
        self.live.truncate(w);
    }

    /// Undirected graph of the reciprocal links.
    pub fn to_graph(&self) -> Graph {
        let adj = (0..self.n())
            .map(|v| {
                self.ports(v).iter().enumerate().filter(|&(k, _)| self.reciprocal(v, k)).map(|(_, &u)| u as NodeId).collect()
            })
            .collect();
        Graph::from_adjacency(adj)
    }
}
