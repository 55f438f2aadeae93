//! Fault-tolerant local load balancing: `tau1` rounds of lazy averaging
//! followed by `tau2` rounds of median-based outlier fixing.

mod bounds;
mod machine;
mod run;

pub use bounds::{active_t_bound, remainder_t_bound, accuracy_factor, stated_active_t_bound, accuracy_epsilon, TheoremBounds};
pub use machine::{LbStatus, LlbMachine, NodeOutcome};
pub use run::{run_llb, LlbNode, LlbRun, LlbSpec};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Contraction factor used when `34/15 - 4 d_min / (3 d_max)` is not below 1.
pub const CLAMPED_RHO: f64 = 14.0 / 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlbConfig {
    pub n: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub tau1: usize,
    pub tau2: usize,
}

fn check(n: usize, d_min: f64, d_max: f64) -> Result<()> {
    if n < 2 || !(d_min > 0.0) || !(d_max >= d_min) || !d_max.is_finite() {
        return Err(Error::InvalidParameter(format!("need n >= 2 and 0 < d_min <= d_max (n = {n}, d_min = {d_min}, d_max = {d_max})")));
    }
    Ok(())
}

/// `ceil(32 (d_max/d_min)^2 ln n)`.
pub fn tau1(n: usize, d_min: f64, d_max: f64) -> usize {
    let r = d_max / d_min;
    (32.0 * r * r * (n as f64).ln()).ceil() as usize
}

/// `34/15 - 4 d_min / (3 d_max)`.
pub fn rho(d_min: f64, d_max: f64) -> f64 {
    34.0 / 15.0 - 4.0 * d_min / (3.0 * d_max)
}

fn tau2_from_rho(n: usize, rho: f64) -> usize {
    ((n as f64).ln() / (1.0 / rho).ln()).ceil() as usize
}

/// `ceil(ln n / ln(1/rho))`; `InvalidRatio` when `rho >= 1`.
pub fn tau2(n: usize, d_min: f64, d_max: f64) -> Result<usize> {
    let r = rho(d_min, d_max);
    if r >= 1.0 {
        return Err(Error::InvalidRatio { rho: r });
    }
    Ok(tau2_from_rho(n, r))
}

pub fn derive_config(n: usize, d_min: f64, d_max: f64) -> Result<LlbConfig> {
    check(n, d_min, d_max)?;
    Ok(LlbConfig { n, d_min, d_max, tau1: tau1(n, d_min, d_max), tau2: tau2(n, d_min, d_max)? })
}

/// Like [`derive_config`], but substitutes [`CLAMPED_RHO`] when the ratio is too
/// spread for the outlier-fixing contraction to hold.
pub fn derive_config_clamped(n: usize, d_min: f64, d_max: f64) -> Result<LlbConfig> {
    check(n, d_min, d_max)?;
    let r = rho(d_min, d_max);
    let tau2 = tau2_from_rho(n, if r < 1.0 { r } else { CLAMPED_RHO });
    Ok(LlbConfig { n, d_min, d_max, tau1: tau1(n, d_min, d_max), tau2 })
}

/// Weight of each received value and of the node's own value when `k`
/// messages arrive.
pub fn llb_weights(k: usize, d_max: f64) -> (f64, f64) {
    let w = 1.0 / (2.0 * d_max);
    (w, (2.0 * d_max - k as f64) * w)
}

/// One averaging step: `sum x_u / (2 d_max) + (2 d_max - k) / (2 d_max) * x`.
///
/// Evaluated as `x + sum (x_u - x) / (2 d_max)` so equal inputs are a fixed
/// point in floating point.
pub fn llb_update(x: f64, received: &[f64], d_max: f64) -> f64 {
    debug_assert!(received.len() as f64 <= 2.0 * d_max, "more messages than 2 d_max");
    let w = 1.0 / (2.0 * d_max);
    x + w * received.iter().map(|&u| u - x).sum::<f64>()
}

/// Median under `f64::total_cmp`; the mean of the two middle values for even
/// counts.
///
/// # Panics
/// If `values` is empty.
pub fn median(values: &[f64]) -> f64 {
    let mut keys: Vec<u64> = values.iter().map(|&x| order_key(x)).collect();
    median_of_keys(&mut keys)
}

/// Integer key with the same order as `f64::total_cmp`.
pub(crate) fn order_key(x: f64) -> u64 {
    let b = x.to_bits();
    b ^ (((b as i64 >> 63) as u64) | (1 << 63))
}

fn from_key(k: u64) -> f64 {
    f64::from_bits(if k >> 63 == 1 { k ^ (1 << 63) } else { !k })
}

/// [`median`] over keys from [`order_key`]; reorders `keys`.
pub(crate) fn median_of_keys(keys: &mut [u64]) -> f64 {
    let n = keys.len();
    assert!(n > 0, "median of an empty set");
    let (lower, &mut hi, _) = keys.select_nth_unstable(n / 2);
    let hi = from_key(hi);
    if n % 2 == 1 {
        hi
    } else {
        0.5 * (from_key(*lower.iter().max().unwrap()) + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_values() {
        let n = 32f64.exp() as usize;
        assert_eq!(tau1(n, 5.0, 5.0), 1024);
        assert_eq!(tau2(2, 7.0, 7.0).unwrap(), 11);
        assert!(matches!(tau2(100, 9.0, 10.0), Err(Error::InvalidRatio { .. })));
        assert!(matches!(derive_config(100, 9.0, 10.0), Err(Error::InvalidRatio { .. })));
        let c = derive_config_clamped(100, 9.0, 10.0).unwrap();
        assert_eq!(c.tau2, tau2(100, 1.0, 1.0).unwrap());
        assert!(derive_config(1, 1.0, 1.0).is_err());
        assert!(derive_config(10, 3.0, 2.0).is_err());
    }

    #[test]
    fn update_examples() {
        assert_eq!(llb_update(1.0, &[0.0], 2.0), 0.75);
        assert_eq!(llb_update(0.3, &[0.3; 7], 4.0), 0.3);
        let (w, s) = llb_weights(3, 5.0);
        assert!((3.0 * w + s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[0.0; 15]), 0.0);
        assert_eq!(median(&[-1.5, 2.0, -0.25, 7.0, -3.0]), -0.25);
        assert_eq!(median(&[-2.0, -1.0]), -1.5);
    }
}
