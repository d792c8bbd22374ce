//! Sample-complexity formulas for the WIS proxy.
//!
//! The guarantees assume returns lie in `[0, v_max]`. Environments with
//! negative payoffs (the bandit presets) must be shifted first; see
//! [`rescaled_v_max`]. The functions never rescale on their own.
//!
//! Capacity measures (covering number, metric entropy, VC dimension) are
//! user-supplied. For the PAC bound the covering number is taken at scale
//! `ε/8` under the metric induced by policy values. All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs shared by the bound formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub v_max: f64,
    pub eps: f64,
    pub delta: f64,
    pub horizon: u32,
    pub c_lo: f64,
    pub c_hi: f64,
    /// Covering number `N(Θ, ε/8)` used by the PAC bound.
    pub capacity: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_max > 0.0
            && self.v_max.is_finite()
            && self.eps > 0.0
            && self.eps.is_finite()
            && self.delta > 0.0
            && self.delta < 1.0
            && self.horizon >= 1
            && 0.0 < self.c_lo
            && self.c_lo < self.c_hi
            && self.c_hi < 1.0
            && self.capacity >= 1.0
            && self.capacity.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid bound inputs {self:?}")))
        }
    }

    pub fn eta(&self) -> f64 {
        eta(self.c_lo, self.c_hi, self.horizon)
    }
}

/// `η = max(c_hi^T, (1 - c_lo)^T)`.
pub fn eta(c_lo: f64, c_hi: f64, horizon: u32) -> f64 {
    let t = horizon as i32;
    c_hi.powi(t).max((1.0 - c_lo).powi(t))
}

/// Largest change of the WIS estimate when one of `n` trajectories is
/// replaced: `v_max c_hi^T / (n c_lo^T + c_hi^T)`.
pub fn wis_sup_deviation(v_max: f64, c_lo: f64, c_hi: f64, horizon: u32, n: u64) -> f64 {
    let t = horizon as i32;
    let hi = c_hi.powi(t);
    v_max * hi / (n as f64 * c_lo.powi(t) + hi)
}

/// `v_max² η⁴ n / (4 (n + η²)²)`.
pub fn wis_variance_bound(v_max: f64, eta: f64, n: u64) -> f64 {
    let n = n as f64;
    let e2 = eta * eta;
    v_max * v_max * e2 * e2 * n / (4.0 * (n + e2).powi(2))
}

/// Right-hand side of the PAC inequality, unclamped:
/// `4 N exp(-ε² (n + η²)² / (32 v_max² η⁴ n))`.
pub fn pac_confidence_raw(inputs: &BoundInputs, n: u64) -> f64 {
    let e2 = inputs.eta().powi(2);
    let n = n as f64;
    let exponent = -inputs.eps.powi(2) * (n + e2).powi(2) / (32.0 * inputs.v_max.powi(2) * e2 * e2 * n);
    4.0 * inputs.capacity * exponent.exp()
}

/// PAC failure probability after `n` samples, clamped to `[0, 1]`.
pub fn pac_confidence(inputs: &BoundInputs, n: u64) -> Result<f64> {
    inputs.validate()?;
    if n == 0 {
        return Err(Error::config("sample size must be at least 1"));
    }
    Ok(pac_confidence_raw(inputs, n).clamp(0.0, 1.0))
}

/// Upper end of the sample-size search.
pub const MAX_SAMPLES: u64 = 1 << 62;

/// Smallest `n` with `pac_confidence(inputs, n) <= delta`, by bisection.
pub fn invert_for_n(inputs: &BoundInputs) -> Result<u64> {
    inputs.validate()?;
    let ok = |n: u64| pac_confidence_raw(inputs, n) <= inputs.delta;
    if ok(1) {
        return Ok(1);
    }
    if !ok(MAX_SAMPLES) {
        return Err(Error::Infeasible(format!(
            "confidence {} not reached within {MAX_SAMPLES} samples",
            inputs.delta
        )));
    }
    // invariant: !ok(lo), ok(hi)
    let (mut lo, mut hi) = (1u64, MAX_SAMPLES);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Likelihood-ratio bound under a uniform two-action sampling policy:
/// `2^T (1 - c_lo)^T`.
pub fn uniform_sampling_ratio_bound(c_lo: f64, horizon: u32) -> f64 {
    (2.0 * (1.0 - c_lo)).powi(horizon as i32)
}

/// Both rows of the sample-complexity comparison.
///
/// Constant factors are as printed; read the values as orders of magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    /// `(v/ε)² 2^{4T} (1-c_lo)^{4T} (K + ln(8/δ))`.
    pub likelihood_ratio: f64,
    /// `(v/ε)² 2^{2T} VC (T + ln(v/ε) + ln(1/δ)) ln T`.
    pub reusable_trajectories: f64,
    /// `likelihood_ratio / reusable_trajectories`; infinite when the second row is 0.
    pub ratio: f64,
    /// `ln T` vanishes at `T = 1`, zeroing the reusable-trajectories row.
    pub horizon_advisory: bool,
}

/// Evaluates both comparison rows. `inputs.capacity` is unused; the metric
/// entropy and VC dimension are passed explicitly.
pub fn compare_bounds(inputs: &BoundInputs, metric_entropy: f64, vc_dimension: f64) -> Result<BoundComparison> {
    inputs.validate()?;
    if !(metric_entropy >= 0.0 && vc_dimension >= 0.0) {
        return Err(Error::config("capacities must be non-negative"));
    }
    let t = inputs.horizon as f64;
    let scale = (inputs.v_max / inputs.eps).powi(2);
    let likelihood_ratio = scale
        * uniform_sampling_ratio_bound(inputs.c_lo, inputs.horizon).powi(4)
        * (metric_entropy + (8.0 / inputs.delta).ln());
    let reusable_trajectories = scale
        * 2f64.powf(2.0 * t)
        * vc_dimension
        * (t + (inputs.v_max / inputs.eps).ln() + (1.0 / inputs.delta).ln())
        * t.ln();
    Ok(BoundComparison {
        likelihood_ratio,
        reusable_trajectories,
        ratio: likelihood_ratio / reusable_trajectories,
        horizon_advisory: inputs.horizon < 2,
    })
}

/// Shift and bound that map returns in `[min_return, max_return]` into
/// `[0, v_max]`: returns `(shift, v_max)` with `R + shift ∈ [0, v_max]`.
pub fn rescaled_v_max(min_return: f64, max_return: f64) -> Result<(f64, f64)> {
    if !(min_return.is_finite() && max_return.is_finite() && min_return <= max_return) {
        return Err(Error::config(format!("invalid return range [{min_return}, {max_return}]")));
    }
    let span = max_return - min_return;
    Ok((-min_return, if span > 0.0 { span } else { 1.0 }))
}
