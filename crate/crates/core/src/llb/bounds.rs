//! Fault-count thresholds under which the load-balancing guarantees apply.

use serde::{Deserialize, Serialize};

fn ratio(d_min: f64, d_max: f64) -> f64 {
    d_min / d_max
}

/// Active-count guarantee as stated in the theorem: `(4/81 r^2 - 2/9 r) n`.
/// Negative for every `r <= 1`.
pub fn stated_active_t_bound(n: usize, d_min: f64, d_max: f64) -> f64 {
    let r = ratio(d_min, d_max);
    (4.0 / 81.0 * r * r - 2.0 / 9.0 * r) * n as f64
}

/// Active-count guarantee in the form the proof establishes: `(40/81 r^2 - 2/9 r) n`.
pub fn active_t_bound(n: usize, d_min: f64, d_max: f64) -> f64 {
    let r = ratio(d_min, d_max);
    (40.0 / 81.0 * r * r - 2.0 / 9.0 * r) * n as f64
}

/// `(1 - (d_max + 1)/(2 d_min)) (40/27 r^2 - 2/9 r)`.
pub fn accuracy_factor(d_min: f64, d_max: f64) -> f64 {
    let r = ratio(d_min, d_max);
    (1.0 - (d_max + 1.0) / (2.0 * d_min)) * (40.0 / 27.0 * r * r - 2.0 / 9.0 * r)
}

/// Smallest accuracy `eps` for which `t < eps n f / (3 tau1)`; `None` when `f <= 0`.
/// The guarantee is meaningful only when the result is below 1.
pub fn accuracy_epsilon(n: usize, t: usize, d_min: f64, d_max: f64, tau1: usize) -> Option<f64> {
    let f = accuracy_factor(d_min, d_max);
    (f > 0.0).then(|| 3.0 * tau1 as f64 * t as f64 / (n as f64 * f))
}

/// Fault threshold `(2 d_min / d_max) eps n / 81` for the remainder to shrink.
pub fn remainder_t_bound(n: usize, d_min: f64, d_max: f64, eps: f64) -> f64 {
    2.0 * ratio(d_min, d_max) * eps * n as f64 / 81.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremBounds {
    pub t: usize,
    pub active_stated_bound: f64,
    pub active_stated_holds: bool,
    pub active_bound: f64,
    pub active_holds: bool,
    pub f: f64,
    pub eps: Option<f64>,
    pub eps_applicable: bool,
}

impl TheoremBounds {
    pub fn evaluate(n: usize, t: usize, d_min: f64, d_max: f64, tau1: usize) -> Self {
        let active_stated_bound = stated_active_t_bound(n, d_min, d_max);
        let active_bound = active_t_bound(n, d_min, d_max);
        let eps = accuracy_epsilon(n, t, d_min, d_max, tau1);
        TheoremBounds {
            t,
            active_stated_bound,
            active_stated_holds: (t as f64) < active_stated_bound,
            active_bound,
            active_holds: (t as f64) < active_bound,
            f: accuracy_factor(d_min, d_max),
            eps,
            eps_applicable: matches!(eps, Some(e) if e < 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theorem_form_is_never_satisfiable() {
        for r in [0.1, 0.5, 0.9, 1.0] {
            assert!(stated_active_t_bound(1000, r, 1.0) < 0.0);
        }
        assert!((active_t_bound(81, 1.0, 1.0) - 22.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon_for_regular_graph() {
        // d = 32: f = (1 - 33/64)(40/27 - 2/9)
        let f = (1.0 - 33.0 / 64.0) * (40.0 / 27.0 - 2.0 / 9.0);
        assert!((accuracy_factor(32.0, 32.0) - f).abs() < 1e-15);
        let e = accuracy_epsilon(4096, 2, 32.0, 32.0, 100).unwrap();
        assert!((e - 600.0 / (4096.0 * f)).abs() < 1e-15);
        assert_eq!(accuracy_epsilon(100, 1, 2.0, 4.0, 10), None);
    }
}
