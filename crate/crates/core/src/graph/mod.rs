//! Undirected simple graphs and the spectral and combinatorial tools used to
//! certify them.

mod certify;
mod core_set;
mod random;
mod sets;
mod spectral;

pub use certify::{check_well_connected, default_lambda2_floor, Certification, FailReason, Verdict, WellConnectedParams};
pub use core_set::{core_subgraph, core_alpha_bound, core_size_bound, CoreSubgraph};
pub use random::{sample_gnp, sample_regular, setgraph_density};
pub use sets::{boundary_edges, edge_density_bound, internal_edges, volume};
pub use spectral::{lambda2, lambda2_with, regularized_lambda2, Method, SpectralOptions, SpectralReport, DENSE_LIMIT};

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub type NodeId = usize;

/// Simple undirected graph stored as sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<NodeId>>,
    m: usize,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph { adj: vec![Vec::new(); n], m: 0 }
    }

    /// Builds a graph from an edge list. Duplicate edges are merged; self-loops
    /// and out-of-range endpoints are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidParameter(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u == v {
                return Err(Error::InvalidParameter(format!("self-loop at {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Self::from_adjacency(adj))
    }

    pub(crate) fn from_adjacency(mut adj: Vec<Vec<NodeId>>) -> Self {
        let mut twice_m = 0;
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            twice_m += list.len();
        }
        Graph { adj, m: twice_m / 2 }
    }

    pub fn complete(n: usize) -> Self {
        let adj = (0..n).map(|v| (0..n).filter(|&u| u != v).collect()).collect();
        Self::from_adjacency(adj)
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least 3 nodes");
        Self::from_edges(n, (0..n).map(|v| (v, (v + 1) % n))).expect("valid cycle")
    }

    pub fn path(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|v| (v - 1, v))).expect("valid path")
    }

    /// Disjoint union; nodes of `other` are shifted by `self.n()`.
    pub fn disjoint_union(&self, other: &Graph) -> Graph {
        let shift = self.n();
        let mut adj = self.adj.clone();
        adj.extend(other.adj.iter().map(|l| l.iter().map(|&u| u + shift).collect()));
        Graph { adj, m: self.m + other.m }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adj[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn min_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.n() && self.adj[u].binary_search(&v).is_ok()
    }

    /// Edges `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().copied().filter(move |&v| v > u).map(move |v| (u, v)))
    }

    pub fn adjacency(&self) -> &[Vec<NodeId>] {
        &self.adj
    }

    /// Canonical text form: `n m` then one `u v` line per edge, `u < v`, ascending.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::with_capacity(12 * (self.m + 1));
        writeln!(s, "{} {}", self.n(), self.m).unwrap();
        for (u, v) in self.edges() {
            writeln!(s, "{u} {v}").unwrap();
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or(Error::Parse { line: 1, reason: "empty input".into() })?;
        let (n, m) = parse_pair(header, hl + 1)?;
        let mut edges = Vec::with_capacity(m);
        for (i, line) in lines {
            edges.push(parse_pair(line, i + 1)?);
        }
        if edges.len() != m {
            return Err(Error::Parse { line: hl + 1, reason: format!("header declares {m} edges, found {}", edges.len()) });
        }
        let g = Self::from_edges(n, edges).map_err(|e| Error::Parse { line: hl + 1, reason: e.to_string() })?;
        if g.m != m {
            return Err(Error::Parse { line: hl + 1, reason: "duplicate edges".into() });
        }
        Ok(g)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

fn parse_pair(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let mut next = || -> Result<usize> {
        it.next()
            .ok_or_else(|| Error::Parse { line: lineno, reason: "expected two integers".into() })?
            .parse()
            .map_err(|e| Error::Parse { line: lineno, reason: format!("{e}") })
    };
    let a = next()?;
    let b = next()?;
    if it.next().is_some() {
        return Err(Error::Parse { line: lineno, reason: "trailing tokens".into() });
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_roundtrip() {
        let g = Graph::from_edges(5, [(3, 1), (0, 4), (1, 0), (2, 3)]).unwrap();
        let s = g.to_edge_list();
        assert_eq!(s, "5 4\n0 1\n0 4\n1 3\n2 3\n");
        assert_eq!(Graph::parse_edge_list(&s).unwrap(), g);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match Graph::parse_edge_list("3 2\n0 1\n1 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Graph::parse_edge_list("3 1\n0 0\n").is_err());
    }

    #[test]
    fn families() {
        assert_eq!(Graph::complete(5).m(), 10);
        assert_eq!(Graph::cycle(6).degrees(), vec![2; 6]);
        assert_eq!(Graph::path(4).m(), 3);
        let u = Graph::complete(3).disjoint_union(&Graph::complete(3));
        assert_eq!((u.n(), u.m()), (6, 6));
        assert!(u.has_edge(4, 5) && !u.has_edge(2, 3));
    }
}
