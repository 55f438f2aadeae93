use super::{median_of_keys, order_key, LlbConfig};
use crate::simnet::Stage;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LbStatus {
    Active,
    Silent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub x: f64,
    pub status: LbStatus,
}

/// Per-node state of one load-balancing call, advanced once per round.
#[derive(Clone, Debug)]
pub struct LlbMachine {
    cfg: LlbConfig,
    x: f64,
    x_tau1: f64,
    status: LbStatus,
    step: usize,
    track: bool,
    failed: Vec<bool>,
    scratch: Vec<u64>,
}

impl LlbMachine {
    /// With `track_omissions`, every port that misses a message in some round
    /// while the node is communicating is counted by [`LlbMachine::omitted`].
    pub fn new(cfg: LlbConfig, x0: f64, track_omissions: bool) -> Self {
        LlbMachine {
            cfg,
            x: x0,
            x_tau1: x0,
            status: LbStatus::Active,
            step: 0,
            track: track_omissions,
            failed: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn config(&self) -> &LlbConfig {
        &self.cfg
    }

    pub fn stage(&self) -> Stage {
        if self.step < self.cfg.tau1 {
            Stage::Balancing
        } else if self.step < self.cfg.tau1 + self.cfg.tau2 {
            Stage::Fixing
        } else {
            Stage::Done
        }
    }

    pub fn is_done(&self) -> bool {
        self.stage() == Stage::Done
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    /// Load at the end of the averaging phase.
    pub fn x_tau1(&self) -> f64 {
        self.x_tau1
    }

    pub fn status(&self) -> LbStatus {
        self.status
    }

    pub fn rounds_done(&self) -> usize {
        self.step
    }

    pub fn omitted(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }

    pub fn outcome(&self) -> NodeOutcome {
        NodeOutcome { x: self.x, status: self.status }
    }

    /// Value to send this round, if any.
    pub fn outgoing(&self) -> Option<f64> {
        match self.stage() {
            Stage::Balancing => Some(self.x),
            Stage::Fixing if self.status == LbStatus::Active => Some(self.x),
            _ => None,
        }
    }

    /// Consumes one round of received `(port, value)` pairs, sorted by port.
    pub fn absorb<I>(&mut self, items: I, degree: usize)
    where
        I: Iterator<Item = (u32, f64)> + Clone,
    {
        let stage = self.stage();
        if stage == Stage::Done {
            return;
        }
        let communicating = stage == Stage::Balancing || self.status == LbStatus::Active;
        if self.track && communicating && items.clone().count() < degree {
            self.failed.resize(degree.max(self.failed.len()), false);
            let mut next = 0u32;
            for (p, _) in items.clone() {
                for q in next..p {
                    self.failed[q as usize] = true;
                }
                next = p + 1;
            }
            for q in next..degree as u32 {
                self.failed[q as usize] = true;
            }
        }
        match stage {
            Stage::Balancing => {
                let w = 1.0 / (2.0 * self.cfg.d_max);
                let x = self.x;
                self.x = x + w * items.fold(0.0, |s, (_, u)| s + (u - x));
                if self.step + 1 == self.cfg.tau1 {
                    self.x_tau1 = self.x;
                }
            }
            Stage::Fixing if self.status == LbStatus::Active => {
                // once loads agree the inbox is one repeated value; skip the selection then
                let first = items.clone().next().map_or(0, |(_, u)| u.to_bits());
                let (count, differ) = items.clone().fold((0usize, 0u64), |(c, d), (_, u)| (c + 1, d | (u.to_bits() ^ first)));
                if (count as f64) < 2.0 / 3.0 * self.cfg.d_min {
                    self.status = LbStatus::Silent;
                } else if differ == 0 {
                    self.x = f64::from_bits(first);
                } else {
                    self.scratch.clear();
                    self.scratch.extend(items.map(|(_, u)| order_key(u)));
                    self.x = median_of_keys(&mut self.scratch);
                }
            }
            _ => {}
        }
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tau1: usize, tau2: usize) -> LlbConfig {
        LlbConfig { n: 16, d_min: 15.0, d_max: 15.0, tau1, tau2 }
    }

    #[test]
    fn fixing_replaces_outlier_with_median() {
        let mut m = LlbMachine::new(cfg(0, 1), 1.0, false);
        assert_eq!(m.stage(), Stage::Fixing);
        let inbox: Vec<(u32, f64)> = (0..15).map(|p| (p, 0.0)).collect();
        m.absorb(inbox.iter().copied(), 15);
        assert_eq!(m.outcome(), NodeOutcome { x: 0.0, status: LbStatus::Active });
        assert!(m.is_done());
    }

    #[test]
    fn starved_node_turns_silent_and_tracks_ports() {
        let mut m = LlbMachine::new(cfg(1, 2), 0.5, true);
        let few: Vec<(u32, f64)> = vec![(1, 1.0), (4, 1.0)];
        m.absorb(few.iter().copied(), 6);
        assert_eq!(m.omitted(), 4);
        m.absorb(few.iter().copied(), 6);
        assert_eq!(m.status(), LbStatus::Silent);
        assert_eq!(m.outgoing(), None);
        let x = m.x();
        m.absorb(few.iter().copied(), 6);
        assert_eq!(m.x(), x);
        assert!(m.is_done());
    }
}
