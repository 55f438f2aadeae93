use super::FaultKind;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Run description carried by the round-0 record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub protocol: String,
    pub n: usize,
    pub kind: FaultKind,
    pub budget: usize,
    pub seed: u64,
    pub d_min: f64,
    pub d_max: f64,
    pub tau1: usize,
    pub tau2: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(NodeId, NodeId)>>,
}

/// One JSON line of a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub faulted: Vec<NodeId>,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub per_node_digest: Vec<u64>,
    /// Senders heard by each node, ascending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heard: Option<Vec<Vec<NodeId>>>,
    /// Node loads after the round (initial loads on the round-0 record).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<TraceMeta>,
}

pub fn write_trace<W: Write>(mut w: W, records: &[RoundRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<RoundRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Trace { line: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Structural and causal consistency of a trace; errors name the offending line.
pub fn validate_causality(records: &[RoundRecord]) -> Result<()> {
    let fail = |i: usize, reason: String| Err(Error::Trace { line: i + 1, reason });
    let Some(meta) = records.first().and_then(|r| r.meta.clone()) else {
        return fail(0, "first record must be round 0 with run metadata".into());
    };
    if records[0].round != 0 {
        return fail(0, "first record must be round 0".into());
    }
    let n = meta.n;
    let mut crashed_at: Vec<Option<u64>> = vec![None; n];
    let mut faulty = vec![false; n];
    let mut count = 0usize;
    for (i, r) in records.iter().enumerate() {
        if r.round != i as u64 {
            return fail(i, format!("expected round {i}, found {}", r.round));
        }
        if r.per_node_digest.len() != n {
            return fail(i, format!("{} digests for {n} nodes", r.per_node_digest.len()));
        }
        if r.messages_dropped > r.messages_sent {
            return fail(i, "more messages dropped than sent".into());
        }
        for &v in &r.faulted {
            if v >= n || faulty[v] {
                return fail(i, format!("node {v} faulted twice or out of range"));
            }
            faulty[v] = true;
            count += 1;
            if meta.kind == FaultKind::Crash {
                crashed_at[v] = Some(r.round);
            }
        }
        if count > meta.budget {
            return fail(i, format!("{count} faulty nodes exceed budget {}", meta.budget));
        }
        if let Some(heard) = &r.heard {
            if heard.len() != n {
                return fail(i, "heard sets do not cover every node".into());
            }
            let mut total = 0u64;
            for (v, h) in heard.iter().enumerate() {
                if !h.is_empty() && matches!(crashed_at[v], Some(c) if c <= r.round) {
                    return fail(i, format!("crashed node {v} received messages"));
                }
                for &u in h {
                    if u >= n {
                        return fail(i, format!("sender {u} out of range"));
                    }
                    if matches!(crashed_at[u], Some(c) if c < r.round) {
                        return fail(i, format!("node {v} heard node {u}, which crashed in round {}", crashed_at[u].unwrap()));
                    }
                }
                total += h.len() as u64;
            }
            if i > 0 && total != r.messages_sent - r.messages_dropped {
                return fail(i, format!("{total} messages heard but {} delivered", r.messages_sent - r.messages_dropped));
            }
        }
    }
    Ok(())
}
