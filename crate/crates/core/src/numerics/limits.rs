//! Numerical probes for the behaviour of a sequence sampled towards an
//! endpoint on a geometric grid.

use serde::{Deserialize, Serialize};

/// Threshold, relative to an interior reference value, below which a
/// sampled quantity counts as zero.
pub const ZERO_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "trend", content = "value")]
pub enum LimitTrend {
    TendsToZero,
    Finite(f64),
    Diverges,
    Inconclusive,
}

/// Decides whether `values` (ordered towards the endpoint) tend to zero.
///
/// `Some(true)` when the last magnitude is below `ZERO_RATIO * |reference|`
/// and the last `tail` magnitudes are non-increasing; `Some(false)` when the
/// last magnitude is at least `1e-3 * |reference|`, or is not small and the
/// tail is non-decreasing; `None` otherwise.
pub fn tends_to_zero(values: &[f64], reference: f64, tail: usize) -> Option<bool> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let tail = tail.clamp(1, values.len());
    let t = &values[values.len() - tail..];
    let last = t[t.len() - 1].abs();
    let dec = t.windows(2).all(|w| w[1].abs() <= w[0].abs());
    let inc = t.windows(2).all(|w| w[1].abs() >= w[0].abs());
    let small = last < ZERO_RATIO * reference.abs();
    if small && dec {
        Some(true)
    } else if last >= 1e-3 * reference.abs() || (!small && inc) {
        Some(false)
    } else {
        None
    }
}

/// Classifies the trend of `values` (ordered towards the endpoint) from the
/// increments over the last `tail` samples.
pub fn sequence_trend(values: &[f64], tail: usize) -> LimitTrend {
    if values.len() < 3 || values.iter().any(|v| v.is_nan()) {
        return LimitTrend::Inconclusive;
    }
    let last = values[values.len() - 1];
    if last.is_infinite() {
        return LimitTrend::Diverges;
    }
    let tail = tail.clamp(3, values.len());
    let t = &values[values.len() - tail..];
    let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return LimitTrend::TendsToZero;
    }
    let d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let n = d.len();
    let (dp, dl) = (d[n - 2].abs(), d[n - 1].abs());
    if dl <= 1e-13 * scale {
        return finite_or_zero(last, scale);
    }
    let same_sign = d.iter().all(|x| x.signum() == d[0].signum());
    let shrinking = d.windows(2).all(|w| w[1].abs() <= w[0].abs());
    let r = dl / dp;
    if shrinking && r < 0.9 {
        let remainder = d[n - 1] * r / (1.0 - r);
        let limit = last + remainder;
        if limit.abs() < ZERO_RATIO * scale {
            return LimitTrend::TendsToZero;
        }
        if remainder.abs() <= 1e-3 * limit.abs() {
            return LimitTrend::Finite(limit);
        }
    }
    if same_sign && r >= 0.95 && last.abs() >= t[0].abs() {
        return LimitTrend::Diverges;
    }
    LimitTrend::Inconclusive
}

fn finite_or_zero(last: f64, scale: f64) -> LimitTrend {
    if last.abs() < ZERO_RATIO * scale {
        LimitTrend::TendsToZero
    } else {
        LimitTrend::Finite(last)
    }
}

/// Geometric grid of `n` points from `a` to `b` (both positive).
pub fn geometric_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > 0.0 && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}
