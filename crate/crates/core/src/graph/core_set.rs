use super::{Graph, NodeId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreSubgraph {
    /// Final `W`, sorted.
    pub removed: Vec<NodeId>,
    /// `V \ W`, sorted.
    pub retained: Vec<NodeId>,
    /// Vertices added after the initial set, in the order they were added.
    pub order: Vec<NodeId>,
    pub phi: f64,
}

impl CoreSubgraph {
    pub fn steps(&self) -> usize {
        self.order.len()
    }
}

/// Grows `W` from `faulty`, adding one vertex per step (lowest index first)
/// while some `v` outside `W` has fewer than `phi * d_min` neighbours outside `W`.
pub fn core_subgraph(g: &Graph, faulty: &[NodeId], phi: f64, d_min: f64) -> CoreSubgraph {
    let n = g.n();
    let threshold = phi * d_min;
    let mut in_w = vec![false; n];
    for &f in faulty {
        in_w[f] = true;
    }
    let mut outside: Vec<usize> = (0..n).map(|v| g.neighbors(v).iter().filter(|&&u| !in_w[u]).count()).collect();
    let mut ready: BTreeSet<NodeId> = (0..n).filter(|&v| !in_w[v] && (outside[v] as f64) < threshold).collect();
    let mut order = Vec::new();
    while let Some(v) = ready.pop_first() {
        in_w[v] = true;
        order.push(v);
        for &u in g.neighbors(v) {
            outside[u] -= 1;
            if !in_w[u] && (outside[u] as f64) < threshold {
                ready.insert(u);
            }
        }
    }
    let (removed, retained) = (0..n).partition(|&v| in_w[v]);
    CoreSubgraph { removed, retained, order, phi }
}

/// Upper limit on `alpha` in the core-subgraph size bound.
pub fn core_alpha_bound(phi: f64, d_min: f64, d_max: f64) -> f64 {
    let r = d_min / d_max;
    (1.0 - phi) * (40.0 / 27.0) * r * r - (2.0 / 9.0) * r
}

/// `ceil(1.5 |F|)`.
pub fn core_size_bound(faulty: usize) -> usize {
    (3 * faulty).div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive fixed-point iteration, rescanning from vertex 0 after every step.
    fn naive(g: &Graph, faulty: &[NodeId], phi: f64, d_min: f64) -> Vec<NodeId> {
        let mut w: Vec<bool> = vec![false; g.n()];
        faulty.iter().for_each(|&f| w[f] = true);
        let mut order = vec![];
        loop {
            let next = (0..g.n()).find(|&v| {
                !w[v] && (g.neighbors(v).iter().filter(|&&u| !w[u]).count() as f64) < phi * d_min
            });
            match next {
                Some(v) => {
                    w[v] = true;
                    order.push(v);
                }
                None => return order,
            }
        }
    }

    #[test]
    fn matches_naive_on_path_and_random() {
        let p = Graph::path(6);
        let r = core_subgraph(&p, &[2], 1.0, 2.0);
        // a path unravels completely from one removed vertex
        assert_eq!(r.removed, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(r.order, naive(&p, &[2], 1.0, 2.0));

        let g = crate::graph::sample_gnp(60, 0.1, 9);
        for f in [vec![0], vec![3, 7, 11], (0..10).collect()] {
            let r = core_subgraph(&g, &f, 2.0 / 3.0, 4.0);
            assert_eq!(r.order, naive(&g, &f, 2.0 / 3.0, 4.0));
        }
    }

    #[test]
    fn alpha_bound_values() {
        assert!((core_alpha_bound(0.0, 1.0, 1.0) - (40.0 / 27.0 - 2.0 / 9.0)).abs() < 1e-15);
        assert_eq!(core_size_bound(3), 5);
        assert_eq!(core_size_bound(4), 6);
    }
}
