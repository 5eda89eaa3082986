//! Univariate standard-normal helpers shared by the rectangle-probability
//! estimator and the truncated Gibbs sampler.
//!
//! Segment masses are computed tail-complementarily so that truncation
//! regions deep in either tail keep relative precision.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("standard normal"))
}

pub(crate) fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    std_normal().cdf(x)
}

/// Survival function `P(Z > x)`, evaluated as `cdf(-x)` for tail accuracy.
pub(crate) fn sf(x: f64) -> f64 {
    cdf(-x)
}

pub(crate) fn quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p.clamp(1e-300, 1.0 - 1e-16))
}

pub(crate) fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Per-segment and total standard-normal masses of a standardized union.
pub(crate) struct SegmentMasses {
    pub per: Vec<f64>,
    pub total: f64,
}

pub(crate) fn segment_masses(segments: &[(f64, f64)]) -> SegmentMasses {
    let per: Vec<f64> = segments
        .iter()
        .map(|&(a, b)| {
            let m = if a >= 0.0 {
                sf(a) - sf(b)
            } else {
                cdf(b) - cdf(a)
            };
            m.max(0.0)
        })
        .collect();
    let total = per.iter().sum();
    SegmentMasses { per, total }
}

/// Mass below which a truncated conditional is treated as numerically
/// unreachable; callers fall back to a deterministic in-set point.
pub(crate) const MASS_FLOOR: f64 = 1e-280;

/// Inverse-CDF draw from the standard normal restricted to a standardized
/// segment union with precomputed masses. `u` is uniform on `[0, 1)`.
/// The result is clamped into its segment, so membership is exact.
pub(crate) fn sample_std_trunc(segments: &[(f64, f64)], masses: &SegmentMasses, u: f64) -> f64 {
    debug_assert!(masses.total > 0.0);
    let target = u.max(1e-16) * masses.total;
    let mut acc = 0.0;
    let mut idx = segments.len() - 1;
    let mut rem = masses.per[idx];
    for (k, &m) in masses.per.iter().enumerate() {
        if target <= acc + m || k == segments.len() - 1 {
            idx = k;
            rem = (target - acc).clamp(0.0, m);
            break;
        }
        acc += m;
    }
    let (a, b) = segments[idx];
    let z = if a >= 0.0 {
        // Right tail: invert through the survival function.
        -quantile((sf(a) - rem).max(1e-300))
    } else {
        quantile(cdf(a) + rem)
    };
    let z = if a.is_finite() { z.max(a) } else { z };
    if b.is_finite() {
        z.min(b)
    } else {
        z
    }
}

/// Nearest in-set point to `z` among standardized segments (deterministic
/// fallback when the conditional mass underflows).
pub(crate) fn project_into(segments: &[(f64, f64)], z: f64) -> f64 {
    let mut best = f64::NAN;
    let mut best_dist = f64::INFINITY;
    for &(a, b) in segments {
        if a <= z && z <= b {
            return z;
        }
        for cand in [a, b] {
            if cand.is_finite() {
                let d = (z - cand).abs();
                if d < best_dist {
                    best_dist = d;
                    best = cand;
                }
            }
        }
    }
    best
}
