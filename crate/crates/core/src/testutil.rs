//! Helpers shared by unit tests.

/// `|a - b| / |b|`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Logarithm of `∫_R exp(g(u)) du` by the trapezoid rule with step `h`.
///
/// For integrands analytic in a strip around the real axis and decaying at
/// both ends the rule converges exponentially in `1/h`. The sum is walked
/// outward from the origin until the log-integrand is 60 units below the
/// running maximum on both sides.
pub fn trapezoid_line(g: impl Fn(f64) -> f64, h: f64) -> f64 {
    let mut vals = vec![g(0.0)];
    let mut max = vals[0];
    for dir in [1.0, -1.0] {
        let mut k = 1;
        loop {
            let v = g(dir * k as f64 * h);
            if v.is_finite() {
                max = max.max(v);
                vals.push(v);
            }
            if (v < max - 60.0 && k > 10) || v == f64::NEG_INFINITY || k > 20_000_000 {
                break;
            }
            k += 1;
        }
    }
    let s: f64 = vals.iter().map(|v| (v - max).exp()).sum();
    max + (s * h).ln()
}
