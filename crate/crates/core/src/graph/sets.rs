use super::{Graph, NodeId};

fn membership(g: &Graph, w: &[NodeId]) -> Vec<bool> {
    let mut inside = vec![false; g.n()];
    for &v in w {
        inside[v] = true;
    }
    inside
}

/// Number of edges with both endpoints in `w`.
pub fn internal_edges(g: &Graph, w: &[NodeId]) -> usize {
    let inside = membership(g, w);
    let twice: usize = (0..g.n())
        .filter(|&v| inside[v])
        .map(|v| g.neighbors(v).iter().filter(|&&u| inside[u]).count())
        .sum();
    twice / 2
}

/// Number of edges with exactly one endpoint in `w`.
pub fn boundary_edges(g: &Graph, w: &[NodeId]) -> usize {
    let inside = membership(g, w);
    (0..g.n())
        .filter(|&v| inside[v])
        .map(|v| g.neighbors(v).iter().filter(|&&u| !inside[u]).count())
        .sum()
}

/// Sum of degrees over `w`.
pub fn volume(g: &Graph, w: &[NodeId]) -> usize {
    let inside = membership(g, w);
    (0..g.n()).filter(|&v| inside[v]).map(|v| g.degree(v)).sum()
}

/// Upper bound `vol(W)/2 * (1 - lambda2 * (1 - vol(W)/vol(G)))` on `E(W)`.
pub fn edge_density_bound(g: &Graph, w: &[NodeId], lambda2: f64) -> f64 {
    let vol_w = volume(g, w) as f64;
    let vol_g = 2.0 * g.m() as f64;
    0.5 * vol_w * (1.0 - lambda2 * (1.0 - vol_w / vol_g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k4_pair() {
        let g = Graph::complete(4);
        let w = [0, 1];
        assert_eq!((internal_edges(&g, &w), boundary_edges(&g, &w), volume(&g, &w)), (1, 4, 6));
        let b = edge_density_bound(&g, &w, 4.0 / 3.0);
        assert!((b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_full_sets() {
        let g = Graph::cycle(5);
        assert_eq!(internal_edges(&g, &[]), 0);
        assert_eq!(boundary_edges(&g, &[]), 0);
        let all: Vec<_> = (0..5).collect();
        assert_eq!(internal_edges(&g, &all), 5);
        assert_eq!(boundary_edges(&g, &all), 0);
        assert!((edge_density_bound(&g, &all, 0.7) - 5.0).abs() < 1e-12);
    }
}
