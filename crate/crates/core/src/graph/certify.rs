use super::{lambda2_with, Graph, NodeId, SpectralOptions, SpectralReport};
use crate::error::Result;
use serde::{Deserialize, Serialize};

/// `1 - 1/(10 ln ln n)`.
pub fn default_lambda2_floor(n: usize) -> f64 {
    1.0 - 1.0 / (10.0 * (n as f64).ln().ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellConnectedParams {
    pub d_min: f64,
    pub d_max: f64,
    pub lambda2_floor: f64,
}

impl WellConnectedParams {
    pub const DESK_FLOOR: f64 = 0.8;

    pub fn new(n: usize, d_min: f64, d_max: f64) -> Self {
        WellConnectedParams { d_min, d_max, lambda2_floor: default_lambda2_floor(n) }
    }

    /// Observed degree range and the desk floor.
    pub fn desk(g: &Graph) -> Self {
        WellConnectedParams {
            d_min: g.min_degree() as f64,
            d_max: g.max_degree() as f64,
            lambda2_floor: Self::DESK_FLOOR,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.lambda2_floor = floor;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailReason {
    Degree,
    Lambda2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail { reason: FailReason, node: Option<NodeId>, value: f64 },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub n: usize,
    pub m: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub params: WellConnectedParams,
    pub spectral: Option<SpectralReport>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

/// Checks the degree window and the spectral floor. The spectral report is
/// included whenever the graph has no isolated node.
pub fn check_well_connected(g: &Graph, params: &WellConnectedParams) -> Result<Certification> {
    let spectral = if g.min_degree() > 0 { Some(lambda2_with(g, &SpectralOptions::default())?) } else { None };
    let bad_degree = (0..g.n()).find(|&v| {
        let d = g.degree(v) as f64;
        d < params.d_min || d > params.d_max
    });
    let verdict = match (bad_degree, spectral) {
        (Some(v), _) => Verdict::Fail { reason: FailReason::Degree, node: Some(v), value: g.degree(v) as f64 },
        (None, Some(s)) if s.lambda2 < params.lambda2_floor => Verdict::Fail { reason: FailReason::Lambda2, node: None, value: s.lambda2 },
        (None, Some(_)) => Verdict::Pass,
        (None, None) => Verdict::Fail { reason: FailReason::Degree, node: Some(0), value: 0.0 },
    };
    Ok(Certification {
        n: g.n(),
        m: g.m(),
        min_degree: g.min_degree(),
        max_degree: g.max_degree(),
        params: *params,
        spectral,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_certifies() {
        let g = Graph::complete(8);
        let c = check_well_connected(&g, &WellConnectedParams::new(8, 7.0, 7.0)).unwrap();
        assert!(c.verdict.passed());
    }

    #[test]
    fn failure_reasons() {
        let g = Graph::complete(8);
        let c = check_well_connected(&g, &WellConnectedParams::new(8, 8.0, 9.0)).unwrap();
        assert!(matches!(c.verdict, Verdict::Fail { reason: FailReason::Degree, node: Some(0), .. }));
        let c = check_well_connected(&Graph::cycle(12), &WellConnectedParams::new(12, 2.0, 2.0)).unwrap();
        assert!(matches!(c.verdict, Verdict::Fail { reason: FailReason::Lambda2, .. }));
    }

    #[test]
    fn floor_values() {
        let e16 = 16f64.exp();
        // ln ln e^16 = ln 16
        assert!((default_lambda2_floor(e16 as usize) - (1.0 - 1.0 / (10.0 * 16f64.ln()))).abs() < 1e-6);
    }
}
