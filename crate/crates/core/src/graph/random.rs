use super::Graph;
use crate::error::{Error, Result};
use fnv::FnvHashSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Erdos-Renyi `G(n, p)`; every pair `u < v` is tested in ascending order, so the
/// graph is a pure function of `(n, p, seed)`.
///
/// # Panics
/// If `p` is outside `[0, 1]`.
pub fn sample_gnp(n: usize, p: f64, seed: u64) -> Graph {
    assert!((0.0..=1.0).contains(&p), "edge probability {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![Vec::new(); n];
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
    }
    Graph::from_adjacency(adj)
}

/// Union-graph density `q = c2 ln n (ln ln n)^2 / (n - 1)` and the per-node
/// sampling probability `p = 1 - sqrt(1 - q)`.
pub fn setgraph_density(n: usize, c2: f64) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("n = {n} too small for ln ln n")));
    }
    let l = (n as f64).ln();
    let q = c2 * l * l.ln().powi(2) / (n as f64 - 1.0);
    if q > 1.0 || !q.is_finite() {
        return Err(Error::InvalidDensity { q });
    }
    Ok((q, 1.0 - (1.0 - q).sqrt()))
}

/// Random `d`-regular graph: a circulant start followed by `10 m` attempted
/// degree-preserving double-edge swaps.
pub fn sample_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d >= n || (n * d) % 2 == 1 {
        return Err(Error::InvalidParameter(format!("no {d}-regular graph on {n} nodes")));
    }
    let key = |a: usize, b: usize| (a.min(b) as u64) * n as u64 + a.max(b) as u64;
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * d / 2);
    for v in 0..n {
        for k in 1..=d / 2 {
            edges.push((v, (v + k) % n));
        }
        if d % 2 == 1 && v < n / 2 {
            edges.push((v, v + n / 2));
        }
    }
    let mut present: FnvHashSet<u64> = edges.iter().map(|&(a, b)| key(a, b)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = edges.len();
    for _ in 0..10 * m {
        let i = rng.gen_range(0..m);
        let j = rng.gen_range(0..m);
        let (a, b) = edges[i];
        let (mut c, mut e) = edges[j];
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut c, &mut e);
        }
        // (a,b),(c,e) -> (a,e),(c,b)
        if a == e || c == b || present.contains(&key(a, e)) || present.contains(&key(c, b)) {
            continue;
        }
        present.remove(&key(a, b));
        present.remove(&key(c, e));
        present.insert(key(a, e));
        present.insert(key(c, b));
        edges[i] = (a, e);
        edges[j] = (c, b);
    }
    Graph::from_edges(n, edges)
}
