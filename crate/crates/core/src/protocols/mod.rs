//! Protocols built on load balancing: approximate counting and binary
//! consensus under crash or omission faults.

mod consensus;
mod counting;

pub use consensus::{
    consensus_config, run_consensus, ConsensusAudit, ConsensusConfig, ConsensusRun, ConsensusSpec, DegreeEstimate, Inputs,
    Mode, SkipPolicy,
};
pub use counting::{counting_config, run_counting, CountingConfig, CountingRun, CountingSpec};

use crate::graph::NodeId;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 1 above `1/2 + margin`, 0 below `1/2 - margin`, otherwise the coin.
pub fn decide_threshold(mu: f64, margin: f64, coin: bool) -> u8 {
    if mu > 0.5 + margin {
        1
    } else if mu < 0.5 - margin {
        0
    } else {
        coin as u8
    }
}

/// Graph-sampling targets: every other node independently with probability `p`.
pub fn sample_targets(n: usize, me: NodeId, p: f64, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    (0..n).filter(|&u| u != me && rng.gen_bool(p)).collect()
}

/// `k` distinct nodes other than `me`, uniformly (all of them if `k >= n - 1`).
pub fn pick_others(n: usize, me: NodeId, k: usize, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let k = k.min(n - 1);
    let mut out: Vec<NodeId> = sample(rng, n - 1, k).into_iter().map(|u| if u >= me { u + 1 } else { u }).collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn thresholds() {
        assert_eq!(decide_threshold(0.51, 0.0, false), 1);
        assert_eq!(decide_threshold(0.49, 0.0, true), 0);
        assert_eq!(decide_threshold(0.5, 0.01, true), 1);
        assert_eq!(decide_threshold(0.5, 0.01, false), 0);
        assert_eq!(decide_threshold(0.505, 0.01, false), 0);
    }

    #[test]
    fn picks_exclude_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pick_others(10, 4, 20, &mut rng);
        assert_eq!(p, vec![0, 1, 2, 3, 5, 6, 7, 8, 9]);
        let p = pick_others(100, 0, 5, &mut rng);
        assert_eq!(p.len(), 5);
        assert!(!p.contains(&0));
        assert!(sample_targets(50, 3, 1.0, &mut rng).len() == 49);
    }
}
