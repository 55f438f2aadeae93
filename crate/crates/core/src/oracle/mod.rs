//! Independent recomputation of the reference processes from recorded traces,
//! and checks of the analytical claims against them.
//!
//! Every recurrence here is evaluated in its literal form, node by node, from
//! the per-round heard sets; nothing is shared with the simulator's update code.

use crate::error::{Error, Result};
use crate::graph::{core_subgraph, Graph, NodeId};
use crate::llb::{rho, CLAMPED_RHO};
use crate::simnet::{FaultKind, RoundRecord, TraceMeta};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Extra term in the skewed-toward-one recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneVariant {
    /// `(d_min - |N_i(v)|) / (2 d_max)`, as written in the lemma.
    MinDegree,
    /// `(d_max - |N_i(v)|) / (2 d_max)`: every missing load counted as 1.
    MaxDegree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub lemma: String,
    pub passed: bool,
    pub first_violation: Option<Violation>,
    pub margins: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub round: usize,
    pub node: Option<NodeId>,
    pub detail: String,
}

/// Trace of one load-balancing run reassembled from its records.
#[derive(Clone, Debug)]
pub struct LlbTrace {
    pub meta: TraceMeta,
    pub graph: Option<Graph>,
    pub x0: Vec<f64>,
    /// `heard[i-1][v]`: senders heard by `v` in round `i`.
    pub heard: Vec<Vec<Vec<NodeId>>>,
    /// `loads[i-1][v]`: load of `v` after round `i`.
    pub loads: Vec<Vec<f64>>,
    pub crash_round: Vec<Option<usize>>,
}

impl LlbTrace {
    pub fn from_records(records: &[RoundRecord]) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::Trace { line: line + 1, reason: reason.into() };
        let head = records.first().ok_or_else(|| bad(0, "empty trace"))?;
        let meta = head.meta.clone().ok_or_else(|| bad(0, "missing metadata"))?;
        let x0 = unwrap_loads(head.loads.as_ref().ok_or_else(|| bad(0, "missing initial loads"))?).ok_or_else(|| bad(0, "missing initial load"))?;
        let graph = match &meta.edges {
            Some(e) => Some(Graph::from_edges(meta.n, e.iter().copied())?),
            None => None,
        };
        let mut heard = Vec::new();
        let mut loads = Vec::new();
        let mut crash_round = vec![None; meta.n];
        for (i, r) in records.iter().enumerate().skip(1) {
            heard.push(r.heard.clone().ok_or_else(|| bad(i, "missing heard sets"))?);
            loads.push(unwrap_loads(r.loads.as_ref().ok_or_else(|| bad(i, "missing loads"))?).ok_or_else(|| bad(i, "missing load"))?);
            if meta.kind == FaultKind::Crash {
                for &v in &r.faulted {
                    crash_round[v] = Some(i);
                }
            }
        }
        Ok(LlbTrace { meta, graph, x0, heard, loads, crash_round })
    }

    fn live_at(&self, v: NodeId, round: usize) -> bool {
        self.crash_round[v].is_none_or(|c| c > round)
    }
}

fn unwrap_loads(l: &[Option<f64>]) -> Option<Vec<f64>> {
    l.iter().copied().collect()
}

/// Fault-free process on `G^I`: `x_i(v) = sum_{u in N(v)} x(u)/(2D) + (1/2 + (D - deg v)/(2D)) x(v)`.
/// Returns `rounds + 1` load vectors.
pub fn ideal_run(g: &Graph, x0: &[f64], d_max: f64, rounds: usize) -> Vec<Vec<f64>> {
    let mut out = vec![x0.to_vec()];
    for _ in 0..rounds {
        let prev = out.last().unwrap();
        let next = (0..g.n())
            .map(|v| {
                let s: f64 = g.neighbors(v).iter().map(|&u| prev[u] / (2.0 * d_max)).sum();
                let own = 0.5 + (d_max - g.degree(v) as f64) / (2.0 * d_max);
                s + own * prev[v]
            })
            .collect();
        out.push(next);
    }
    out
}

/// Skewed-toward-zero and skewed-toward-one processes driven by the recorded
/// heard sets. Returns `(zero, one)`, each with `heard.len() + 1` vectors.
pub fn skewed_runs(heard: &[Vec<Vec<NodeId>>], x0: &[f64], d_min: f64, d_max: f64, variant: OneVariant) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = x0.len();
    let extra = match variant {
        OneVariant::MinDegree => d_min,
        OneVariant::MaxDegree => d_max,
    };
    let mut zero = vec![x0.to_vec()];
    let mut one = vec![x0.to_vec()];
    for round in heard {
        let (z, o) = (zero.last().unwrap(), one.last().unwrap());
        let mut zn = vec![0.0; n];
        let mut on = vec![0.0; n];
        for v in 0..n {
            let nb = &round[v];
            let sz: f64 = nb.iter().map(|&u| z[u] / (2.0 * d_max)).sum();
            let so: f64 = nb.iter().map(|&u| o[u] / (2.0 * d_max)).sum();
            zn[v] = sz + 0.5 * z[v];
            on[v] = so + 0.5 * o[v] + (extra - nb.len() as f64) / (2.0 * d_max);
        }
        zero.push(zn);
        one.push(on);
    }
    (zero, one)
}

/// Checks `zero <= actual <= one` (and `zero <= ideal <= one` when the graph is
/// known) for every node still live, over the averaging rounds.
pub fn sandwich_check(trace: &LlbTrace, variant: OneVariant, tol: f64) -> OracleVerdict {
    let meta = &trace.meta;
    let rounds = meta.tau1.min(trace.heard.len());
    let (zero, one) = skewed_runs(&trace.heard[..rounds], &trace.x0, meta.d_min, meta.d_max, variant);
    let ideal = trace.graph.as_ref().map(|g| ideal_run(g, &trace.x0, meta.d_max, rounds));
    let mut first = None;
    let mut m = [f64::INFINITY; 4];
    for i in 1..=rounds {
        for v in 0..meta.n {
            if !trace.live_at(v, i) {
                continue;
            }
            let actual = trace.loads[i - 1][v];
            let (lo, hi) = (zero[i][v], one[i][v]);
            let mut gaps = vec![("actual_minus_zero", actual - lo), ("one_minus_actual", hi - actual)];
            if let Some(id) = &ideal {
                gaps.push(("ideal_minus_zero", id[i][v] - lo));
                gaps.push(("one_minus_ideal", hi - id[i][v]));
            }
            for (k, &(name, gap)) in gaps.iter().enumerate() {
                m[k] = m[k].min(gap);
                if gap < -tol && first.is_none() {
                    first = Some(Violation {
                        round: i,
                        node: Some(v),
                        detail: format!("{name} = {gap:e} (zero {lo}, actual {actual}, one {hi})"),
                    });
                }
            }
        }
    }
    let names = ["actual_minus_zero", "one_minus_actual", "ideal_minus_zero", "one_minus_ideal"];
    let margins = names.iter().zip(m).filter(|(_, x)| x.is_finite()).map(|(k, x)| (k.to_string(), x)).collect();
    let lemma = match variant {
        OneVariant::MinDegree => "sandwich",
        OneVariant::MaxDegree => "sandwich_max_degree",
    };
    OracleVerdict { lemma: lemma.into(), passed: first.is_none(), first_violation: first, margins }
}

/// Every recorded load lies within the range of the initial loads.
pub fn value_range_check(trace: &LlbTrace, tol: f64) -> OracleVerdict {
    let lo = trace.x0.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = trace.x0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut first = None;
    let mut worst = f64::INFINITY;
    for (i, l) in trace.loads.iter().enumerate() {
        for (v, &x) in l.iter().enumerate() {
            let gap = (x - lo).min(hi - x);
            worst = worst.min(gap);
            if gap < -tol && first.is_none() {
                first = Some(Violation { round: i + 1, node: Some(v), detail: format!("load {x} outside [{lo}, {hi}]") });
            }
        }
    }
    let margins = BTreeMap::from([("min_gap".to_string(), worst)]);
    OracleVerdict { lemma: "value_range".into(), passed: first.is_none(), first_violation: first, margins }
}

/// Outlier-fixing progress: builds the converged core `C_0` from the state
/// after averaging, follows `C_i` through the fixing rounds and checks that
/// the remainder `R_i = A \ C_i` decays geometrically to empty.
pub fn remainder_shrinkage_check(trace: &LlbTrace, eps: f64) -> Result<OracleVerdict> {
    let meta = &trace.meta;
    let g = trace.graph.as_ref().ok_or_else(|| Error::PreconditionUnmet("trace lacks the graph".into()))?;
    let (n, d_min, d_max) = (meta.n, meta.d_min, meta.d_max);
    let bound = 2.0 * d_min / d_max * eps * n as f64 / 81.0;
    if meta.budget as f64 >= bound {
        return Err(Error::PreconditionUnmet(format!("t = {} is not below {bound:.4}", meta.budget)));
    }
    if trace.heard.len() < meta.tau1 + meta.tau2 {
        return Err(Error::PreconditionUnmet("trace stops before the fixing phase ends".into()));
    }
    let mu = trace.x0.iter().sum::<f64>() / n as f64;
    let end = meta.tau1 + meta.tau2;

    // final active set, recomputed from heard counts
    let mut active: Vec<bool> = (0..n).map(|v| trace.live_at(v, end)).collect();
    for i in meta.tau1 + 1..=end {
        for v in 0..n {
            if active[v] && (trace.heard[i - 1][v].len() as f64) < 2.0 / 3.0 * d_min {
                active[v] = false;
            }
        }
    }
    let x_tau1: &[f64] = if meta.tau1 == 0 { &trace.x0 } else { &trace.loads[meta.tau1 - 1] };
    let excluded: Vec<NodeId> = (0..n).filter(|&v| !active[v] || (x_tau1[v] - mu).abs() > eps).collect();
    let phi = (d_max + 1.0) / (2.0 * d_min);
    let mut in_c: Vec<bool> = vec![false; n];
    for v in core_subgraph(g, &excluded, phi, d_min).retained {
        in_c[v] = true;
    }
    let active_count = active.iter().filter(|&&a| a).count();
    let r_size = |c: &[bool]| active_count - (0..n).filter(|&v| active[v] && c[v]).count();

    let r = rho(d_min, d_max);
    let rate = if r < 1.0 { r } else { CLAMPED_RHO };
    let mut sizes = vec![r_size(&in_c)];
    let mut first = None;
    for i in 1..=meta.tau2 {
        let heard = &trace.heard[meta.tau1 + i - 1];
        let next: Vec<bool> = (0..n)
            .map(|v| active[v] && (heard[v].iter().filter(|&&u| in_c[u]).count() as f64) >= 0.5 * (d_min + 1.0))
            .collect();
        in_c = next;
        let s = r_size(&in_c);
        let prev = *sizes.last().unwrap();
        if s as f64 > rate * prev as f64 + 1.0 && first.is_none() {
            first = Some(Violation { round: meta.tau1 + i, node: None, detail: format!("|R| went from {prev} to {s}") });
        }
        sizes.push(s);
    }
    let last = *sizes.last().unwrap();
    if last != 0 && first.is_none() {
        first = Some(Violation { round: end, node: None, detail: format!("{last} active nodes outside the core after fixing") });
    }
    let final_loads = &trace.loads[end - 1];
    let core_dev = (0..n).filter(|&v| in_c[v]).map(|v| (final_loads[v] - mu).abs()).fold(0.0, f64::max);
    let margins = BTreeMap::from([
        ("r0".to_string(), sizes[0] as f64),
        ("r_final".to_string(), last as f64),
        ("rho".to_string(), rate),
        ("core_max_deviation".to_string(), core_dev),
        ("t_bound".to_string(), bound),
    ]);
    Ok(OracleVerdict { lemma: "remainder_shrinkage".into(), passed: first.is_none(), first_violation: first, margins })
}
