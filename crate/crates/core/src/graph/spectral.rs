use super::Graph;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest order solved with the dense symmetric eigensolver.
pub const DENSE_LIMIT: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { tol: 1e-8, max_iter: 2000, method: Method::Auto }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda2: f64,
    /// `||L y - lambda2 y||` for the returned unit eigenvector.
    pub residual: f64,
    pub method: Method,
    pub iterations: usize,
}

/// Second-smallest eigenvalue of the normalized Laplacian `I - D^-1/2 A D^-1/2`.
pub fn lambda2(g: &Graph) -> Result<SpectralReport> {
    lambda2_with(g, &SpectralOptions::default())
}

pub fn lambda2_with(g: &Graph, opts: &SpectralOptions) -> Result<SpectralReport> {
    if let Some(node) = (0..g.n()).find(|&v| g.degree(v) == 0) {
        return Err(Error::DegenerateGraph { node });
    }
    let op = Operator::normalized(g);
    solve(&op, opts)
}

/// Second-smallest eigenvalue of the normalized Laplacian of `G^I`: every node
/// padded with self-loops up to degree `d_max` (each loop adds one to the degree).
pub fn regularized_lambda2(g: &Graph, d_max: usize, opts: &SpectralOptions) -> Result<SpectralReport> {
    if d_max < g.max_degree() || d_max == 0 {
        return Err(Error::InvalidParameter(format!("d_max = {d_max} below max degree {}", g.max_degree())));
    }
    let op = Operator::regularized(g, d_max);
    solve(&op, opts)
}

/// `M = S (A + diag(loops)) S` where the trivial top eigenvector is `psi`.
struct Operator<'a> {
    g: &'a Graph,
    scale: Vec<f64>,
    loops: Vec<f64>,
    psi: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn normalized(g: &'a Graph) -> Self {
        let scale: Vec<f64> = (0..g.n()).map(|v| 1.0 / (g.degree(v) as f64).sqrt()).collect();
        let total: f64 = (0..g.n()).map(|v| g.degree(v) as f64).sum();
        let psi = (0..g.n()).map(|v| (g.degree(v) as f64 / total).sqrt()).collect();
        Operator { g, scale, loops: vec![0.0; g.n()], psi }
    }

    fn regularized(g: &'a Graph, d_max: usize) -> Self {
        let n = g.n();
        let s = 1.0 / d_max as f64;
        let loops = (0..n).map(|v| (d_max - g.degree(v)) as f64).collect();
        Operator { g, scale: vec![s.sqrt(); n], loops, psi: vec![1.0 / (n as f64).sqrt(); n] }
    }

    fn n(&self) -> usize {
        self.g.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for v in 0..self.n() {
            let mut acc = self.loops[v] * self.scale[v] * x[v];
            for &u in self.g.neighbors(v) {
                acc += self.scale[u] * x[u];
            }
            y[v] = self.scale[v] * acc;
        }
    }

    fn dense_laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::<f64>::identity(n, n);
        for v in 0..n {
            m[(v, v)] -= self.loops[v] * self.scale[v] * self.scale[v];
            for &u in self.g.neighbors(v) {
                m[(v, u)] -= self.scale[v] * self.scale[u];
            }
        }
        m
    }

    /// `||(I - M) y - lambda y||`.
    fn residual(&self, y: &[f64], lambda: f64) -> f64 {
        let mut my = vec![0.0; y.len()];
        self.apply(y, &mut my);
        y.iter().zip(&my).map(|(&yi, &mi)| (yi - mi - lambda * yi).powi(2)).sum::<f64>().sqrt()
    }
}

fn solve(op: &Operator<'_>, opts: &SpectralOptions) -> Result<SpectralReport> {
    let n = op.n();
    if n < 2 {
        return Err(Error::InvalidParameter("lambda2 needs at least two nodes".into()));
    }
    let dense = match opts.method {
        Method::Dense => true,
        Method::Lanczos => false,
        Method::Auto => n <= DENSE_LIMIT,
    };
    let report = if dense { dense_solve(op)? } else { lanczos_solve(op, opts)? };
    if report.residual > opts.tol {
        return Err(Error::NoConvergence { residual: report.residual, iterations: report.iterations });
    }
    Ok(report)
}

fn dense_solve(op: &Operator<'_>) -> Result<SpectralReport> {
    let n = op.n();
    let eig = SymmetricEigen::try_new(op.dense_laplacian(), f64::EPSILON, 100 * n)
        .ok_or(Error::NoConvergence { residual: f64::INFINITY, iterations: 100 * n })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let idx = order[1];
    let lambda = eig.eigenvalues[idx];
    let y: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    let residual = op.residual(&y, lambda);
    Ok(SpectralReport { lambda2: lambda.clamp(0.0, 2.0), residual, method: Method::Dense, iterations: 1 })
}

fn lanczos_solve(op: &Operator<'_>, opts: &SpectralOptions) -> Result<SpectralReport> {
    let n = op.n();
    let kmax = opts.max_iter.min(n - 1).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_2055);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    project_out(&mut q, &op.psi);
    normalize(&mut q);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut alpha = Vec::with_capacity(kmax);
    let mut beta: Vec<f64> = Vec::with_capacity(kmax);
    let mut w = vec![0.0; n];
    let mut best = None;
    let mut next_check = 10;

    for k in 0..kmax {
        op.apply(&q, &mut w);
        let a = dot(&w, &q);
        alpha.push(a);
        basis.push(q.clone());
        // full reorthogonalisation, twice for stability
        for _ in 0..2 {
            project_out(&mut w, &op.psi);
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let b = norm(&w);
        let last = b < 1e-13 || k + 1 == kmax;
        if last || k + 1 >= next_check {
            next_check = (next_check + 10).max(next_check * 5 / 4);
            let (theta, coeffs) = top_ritz(&alpha, &beta);
            let y = combine(&basis, &coeffs);
            let lambda = 1.0 - theta;
            let residual = op.residual(&y, lambda);
            best = Some(SpectralReport { lambda2: lambda.clamp(0.0, 2.0), residual, method: Method::Lanczos, iterations: k + 1 });
            if residual <= opts.tol {
                break;
            }
        }
        if b < 1e-13 {
            break;
        }
        beta.push(b);
        for (qi, wi) in q.iter_mut().zip(&w) {
            *qi = wi / b;
        }
    }
    best.ok_or(Error::NoConvergence { residual: f64::INFINITY, iterations: kmax })
}

/// Largest eigenpair of the Lanczos tridiagonal matrix.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let idx = eig.eigenvalues.imax();
    let s: DVector<f64> = eig.eigenvectors.column(idx).into();
    (eig.eigenvalues[idx], s.iter().copied().collect())
}

fn combine(basis: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; basis[0].len()];
    for (b, &c) in basis.iter().zip(coeffs) {
        axpy(c, b, &mut y);
    }
    normalize(&mut y);
    y
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let s = norm(a);
    a.iter_mut().for_each(|x| *x /= s);
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn project_out(x: &mut [f64], psi: &[f64]) {
    let c = dot(x, psi);
    axpy(-c, psi, x);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sample_gnp;

    #[test]
    fn closed_forms() {
        for n in [4usize, 8, 64] {
            let r = lambda2(&Graph::complete(n)).unwrap();
            assert!((r.lambda2 - n as f64 / (n as f64 - 1.0)).abs() < 1e-8, "K{n}: {}", r.lambda2);
        }
        assert!((lambda2(&Graph::cycle(4)).unwrap().lambda2 - 1.0).abs() < 1e-8);
        // C_n: 1 - cos(2 pi / n)
        let c = lambda2(&Graph::cycle(10)).unwrap().lambda2;
        assert!((c - (1.0 - (2.0 * std::f64::consts::PI / 10.0).cos())).abs() < 1e-8);
        let split = Graph::complete(4).disjoint_union(&Graph::complete(4));
        assert!(lambda2(&split).unwrap().lambda2 <= 1e-8);
    }

    #[test]
    fn isolated_vertex_is_degenerate() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        assert!(matches!(lambda2(&g), Err(Error::DegenerateGraph { node: 2 })));
    }

    #[test]
    fn lanczos_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, p) in [(60usize, 0.2), (150, 0.1), (300, 0.05)] {
            let g = sample_gnp(n, p, rng.gen());
            if g.min_degree() == 0 {
                continue;
            }
            let d = lambda2_with(&g, &SpectralOptions { method: Method::Dense, ..Default::default() }).unwrap();
            let l = lambda2_with(&g, &SpectralOptions { method: Method::Lanczos, ..Default::default() }).unwrap();
            assert!((d.lambda2 - l.lambda2).abs() < 1e-8, "n={n}: {} vs {}", d.lambda2, l.lambda2);
        }
        let split = Graph::complete(5).disjoint_union(&Graph::cycle(7));
        let l = lambda2_with(&split, &SpectralOptions { method: Method::Lanczos, ..Default::default() }).unwrap();
        assert!(l.lambda2 <= 1e-8);
    }

    #[test]
    fn regularized_on_regular_graph_matches_plain() {
        let g = Graph::cycle(9);
        let a = lambda2(&g).unwrap().lambda2;
        let b = regularized_lambda2(&g, 2, &SpectralOptions::default()).unwrap().lambda2;
        assert!((a - b).abs() < 1e-10);
        // padding a 2-regular graph to degree 4 halves its Laplacian spectrum
        let p = regularized_lambda2(&Graph::cycle(9), 4, &SpectralOptions::default()).unwrap().lambda2;
        assert!((p - a / 2.0).abs() < 1e-10);
    }
}
