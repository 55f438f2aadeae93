use super::llb_verdicts;
use crate::error::Result;
use crate::oracle::{LlbTrace, OracleVerdict};
use crate::simnet::{read_trace, validate_causality};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub protocol: String,
    pub n: usize,
    pub rounds: usize,
    pub verdicts: Vec<OracleVerdict>,
    /// Gated verdict failed.
    pub hard_violation: bool,
    pub notes: Vec<String>,
}

/// Re-checks a stored trace without simulating. Causality errors carry the
/// offending line. `only` keeps verdicts whose lemma name is listed.
pub fn replay(path: &Path, only: Option<&[String]>) -> Result<ReplayReport> {
    let records = read_trace(BufReader::new(File::open(path)?))?;
    validate_causality(&records)?;
    let meta = records[0].meta.clone().expect("checked by validate_causality");
    let mut notes = Vec::new();
    let full = records.len() > 1 && records.iter().all(|r| r.loads.is_some()) && records[1..].iter().all(|r| r.heard.is_some());
    let (mut verdicts, mut hard) = (Vec::new(), false);
    if full {
        (verdicts, hard) = llb_verdicts(&LlbTrace::from_records(&records)?);
    } else {
        notes.push("trace carries digests only; causality checked, no load oracles apply".into());
    }
    if let Some(keep) = only {
        verdicts.retain(|v| keep.iter().any(|k| k == &v.lemma));
        // the verbatim sandwich form only gates on regular windows
        let gated = |v: &OracleVerdict| v.lemma != "sandwich" || meta.d_min == meta.d_max;
        hard = verdicts.iter().any(|v| !v.passed && gated(v));
    }
    Ok(ReplayReport { protocol: meta.protocol, n: meta.n, rounds: records.len() - 1, verdicts, hard_violation: hard, notes })
}
