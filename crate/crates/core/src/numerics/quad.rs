//! Globally adaptive Gauss-Kronrod (10/21-point) quadrature.
//!
//! Infinite limits are mapped to a finite interval; the square-root map
//! `x = lo + u²` removes inverse-square-root endpoint singularities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];
/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Variable substitution applied before integrating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    /// No substitution; infinite limits fall back to [`Transform::InfiniteMap`].
    #[default]
    None,
    /// `x = lo + t/(1-t)` (and its mirror images) for infinite limits.
    InfiniteMap,
    /// `x = lo + u²`; for an infinite upper limit `x = lo + (t/(1-t))²`.
    SquareRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    #[serde(default)]
    pub transform: Transform,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_subdivisions: 2000,
            transform: Transform::None,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        QuadratureSpec {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_subdivisions < 1 {
            return Err(Error::InvalidParameter(format!(
                "quadrature tolerances must be positive and max_subdivisions >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Outcome of an integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub err_est: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl QuadResult {
    /// Converts a non-converged result into an error.
    pub fn require(self) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::NonConvergence {
                what: "adaptive quadrature",
                iterations: self.evaluations,
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Equal)
    }
}

fn gk21(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(domain("integrate", format!("integrand is {fc} at {c}")));
    }
    let mut rk = fc * WGK[10];
    let mut rg = 0.0;
    let mut fv = [(0.0, 0.0); 10];
    for j in 0..10 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        if !f1.is_finite() || !f2.is_finite() {
            return Err(domain("integrate", format!("integrand is non-finite near {}", c - x)));
        }
        fv[j] = (f1, f2);
        rk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * rk;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv[j].0 - mean).abs() + (fv[j].1 - mean).abs());
    }
    let value = rk * h;
    let asc = asc * h.abs();
    let mut err = ((rk - rg) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    let roundoff = 50.0 * f64::EPSILON * value.abs();
    Ok((value, err.max(roundoff)))
}

/// Adaptive integration over `[lo, hi]` with interior breakpoints, all in
/// the working variable.
fn adapt(f: &mut impl FnMut(f64) -> f64, points: &[f64], spec: &QuadratureSpec) -> Result<QuadResult> {
    let mut heap = BinaryHeap::new();
    let mut evals = 0;
    for w in points.windows(2) {
        if w[1] > w[0] {
            let (value, err) = gk21(f, w[0], w[1])?;
            evals += 21;
            heap.push(Panel {
                a: w[0],
                b: w[1],
                value,
                err,
            });
        }
    }
    let mut splits = 0;
    loop {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let err: f64 = heap.iter().map(|p| p.err).sum();
        let target = spec.abs_tol.max(spec.rel_tol * total.abs());
        if err <= target {
            return Ok(QuadResult {
                value: total,
                err_est: err,
                converged: true,
                evaluations: evals,
            });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => {
                return Ok(QuadResult {
                    value: 0.0,
                    err_est: 0.0,
                    converged: true,
                    evaluations: evals,
                })
            }
        };
        let mid = 0.5 * (worst.a + worst.b);
        if splits >= spec.max_subdivisions || mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            return Ok(QuadResult {
                value: total,
                err_est: err,
                converged: false,
                evaluations: evals,
            });
        }
        splits += 1;
        let (v1, e1) = gk21(f, worst.a, mid)?;
        let (v2, e2) = gk21(f, mid, worst.b)?;
        evals += 42;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
    }
}

/// Integrates `f` over `(lo, hi)`; either limit may be infinite.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<QuadResult> {
    integrate_with_points(f, lo, hi, &[], spec)
}

/// As [`integrate`], with interior breakpoints (in the original variable)
/// at which the integration interval is split initially.
pub fn integrate_with_points(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    integrate_dyn(&f, lo, hi, breaks, spec)
}

fn integrate_dyn(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64], spec: &QuadratureSpec) -> Result<QuadResult> {
    spec.validate()?;
    if lo.is_nan() || hi.is_nan() || !(lo < hi) {
        if lo == hi {
            return Ok(QuadResult {
                value: 0.0,
                err_est: 0.0,
                converged: true,
                evaluations: 0,
            });
        }
        return Err(domain("integrate", format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&b| b > lo && b < hi).collect();
    inner.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));

    // Anchor the maps of infinite tails at the outermost breakpoints so that
    // features near them are not squeezed against the end of the map.
    if !inner.is_empty() && (lo.is_infinite() || hi.is_infinite()) {
        let (first, last) = (inner[0], inner[inner.len() - 1]);
        let mut parts = Vec::with_capacity(3);
        let a = if lo.is_infinite() {
            parts.push(integrate_dyn(f, lo, first, &[], spec)?);
            first
        } else {
            lo
        };
        let b = if hi.is_infinite() { last } else { hi };
        if a < b {
            parts.push(integrate_dyn(f, a, b, &inner, spec)?);
        }
        if hi.is_infinite() {
            parts.push(integrate_dyn(f, last, hi, &[], spec)?);
        }
        return Ok(parts.into_iter().fold(
            QuadResult {
                value: 0.0,
                err_est: 0.0,
                converged: true,
                evaluations: 0,
            },
            |acc, r| QuadResult {
                value: acc.value + r.value,
                err_est: acc.err_est + r.err_est,
                converged: acc.converged && r.converged,
                evaluations: acc.evaluations + r.evaluations,
            },
        ));
    }

    let transform = match spec.transform {
        Transform::None if lo.is_infinite() || hi.is_infinite() => Transform::InfiniteMap,
        t => t,
    };
    match (transform, lo.is_finite(), hi.is_finite()) {
        (Transform::None, _, _) | (Transform::InfiniteMap, true, true) => {
            let mut g = |x: f64| f(x);
            let mut pts = vec![lo];
            pts.extend(inner);
            pts.push(hi);
            adapt(&mut g, &pts, spec)
        }
        (Transform::InfiniteMap, true, false) => {
            let mut g = |t: f64| {
                let s = 1.0 - t;
                let x = lo + t / s;
                if x.is_infinite() {
                    0.0
                } else {
                    f(x) / (s * s)
                }
            };
            let mut pts = vec![0.0];
            pts.extend(inner.iter().map(|&x| (x - lo) / (1.0 + x - lo)));
            pts.push(1.0);
            adapt(&mut g, &pts, spec)
        }
        (Transform::InfiniteMap, false, true) => {
            let mut g = |t: f64| {
                let s = 1.0 - t;
                let x = hi - t / s;
                if x.is_infinite() {
                    0.0
                } else {
                    f(x) / (s * s)
                }
            };
            let mut pts = vec![0.0];
            pts.extend(inner.iter().rev().map(|&x| (hi - x) / (1.0 + hi - x)));
            pts.push(1.0);
            adapt(&mut g, &pts, spec)
        }
        (Transform::InfiniteMap, false, false) | (Transform::SquareRoot, false, false) => {
            let mut g = |t: f64| {
                let s = 1.0 - t * t;
                let x = t / s;
                if x.is_infinite() {
                    0.0
                } else {
                    f(x) * (1.0 + t * t) / (s * s)
                }
            };
            let to_t = |x: f64| if x == 0.0 { 0.0 } else { 2.0 * x / (1.0 + (1.0 + 4.0 * x * x).sqrt()) };
            let mut pts = vec![-1.0];
            pts.extend(inner.iter().map(|&x| to_t(x)));
            pts.push(1.0);
            adapt(&mut g, &pts, spec)
        }
        (Transform::SquareRoot, true, true) => {
            let mut g = |u: f64| 2.0 * u * f(lo + u * u);
            let mut pts = vec![0.0];
            pts.extend(inner.iter().map(|&x| (x - lo).sqrt()));
            pts.push((hi - lo).sqrt());
            adapt(&mut g, &pts, spec)
        }
        (Transform::SquareRoot, true, false) => {
            let mut g = |t: f64| {
                let s = 1.0 - t;
                let r = t / s;
                let x = lo + r * r;
                if x.is_infinite() {
                    0.0
                } else {
                    f(x) * 2.0 * r / (s * s)
                }
            };
            let mut pts = vec![0.0];
            pts.extend(inner.iter().map(|&x| {
                let r = (x - lo).sqrt();
                r / (1.0 + r)
            }));
            pts.push(1.0);
            adapt(&mut g, &pts, spec)
        }
        (Transform::SquareRoot, false, true) => {
            let mut g = |t: f64| {
                let s = 1.0 - t;
                let r = t / s;
                let x = hi - r * r;
                if x.is_infinite() {
                    0.0
                } else {
                    f(x) * 2.0 * r / (s * s)
                }
            };
            let mut pts = vec![0.0];
            pts.extend(inner.iter().rev().map(|&x| {
                let r = (hi - x).sqrt();
                r / (1.0 + r)
            }));
            pts.push(1.0);
            adapt(&mut g, &pts, spec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::new(1e-14, 1e-12)
    }

    #[test]
    fn exponential_tail() {
        let r = integrate(|x| (-x).exp(), 0.0, f64::INFINITY, &spec()).unwrap();
        assert!(r.converged);
        assert!((r.value - 1.0).abs() < 1e-12);
        let r = integrate(|x| x.exp(), f64::NEG_INFINITY, 0.0, &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_whole_line() {
        let r = integrate(|x| (-0.5 * x * x).exp(), f64::NEG_INFINITY, f64::INFINITY, &spec()).unwrap();
        assert!((r.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-11);
        let r = integrate_with_points(|x| (-(x - 40.0) * (x - 40.0)).exp(), f64::NEG_INFINITY, f64::INFINITY, &[40.0], &spec()).unwrap();
        assert!(r.converged);
        assert!((r.value - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn inverse_sqrt_singularity() {
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, &spec()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.value - 2.0).abs() < 1e-10);
        let s = spec().with_transform(Transform::SquareRoot);
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, &s).unwrap();
        assert!((r.value - 2.0).abs() < 1e-13);
        let r = integrate(|x| (-x.sqrt()).exp() / x.sqrt(), 0.0, f64::INFINITY, &s).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let s = QuadratureSpec::new(1e-15, 1e-15).with_max_subdivisions(3);
        let r = integrate(|x| (1.0 / x).sin(), 1e-4, 1.0, &s).unwrap();
        assert!(!r.converged);
        assert!(r.require().is_err());
    }

    #[test]
    fn breakpoints_and_invalid_specs() {
        let r = integrate_with_points(|x| (x - 0.3).abs(), 0.0, 1.0, &[0.3], &spec()).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
        assert!(integrate(|x| x, 1.0, 0.0, &spec()).is_err());
        assert!(integrate(|x| x, 0.0, 1.0, &QuadratureSpec::new(0.0, 1e-3)).is_err());
        assert!(integrate(|_| f64::NAN, 0.0, 1.0, &spec()).is_err());
    }

    proptest! {
        #[test]
        fn linearity(a in -3.0f64..3.0, b in -3.0f64..3.0, w in 0.1f64..5.0) {
            let f = |x: f64| (w * x).sin() + x * x;
            let g = |x: f64| (-x * x).exp();
            let s = spec();
            let lhs = integrate(|x| a * f(x) + b * g(x), -1.0, 2.0, &s).unwrap().value;
            let rhs = a * integrate(f, -1.0, 2.0, &s).unwrap().value + b * integrate(g, -1.0, 2.0, &s).unwrap().value;
            prop_assert!((lhs - rhs).abs() < 1e-11);
        }

        #[test]
        fn additivity(m in -0.9f64..1.9, w in 0.1f64..5.0) {
            let f = |x: f64| (w * x).cos() * (-0.3 * x).exp();
            let s = spec();
            let whole = integrate(f, -1.0, 2.0, &s).unwrap().value;
            let parts = integrate(f, -1.0, m, &s).unwrap().value + integrate(f, m, 2.0, &s).unwrap().value;
            prop_assert!((whole - parts).abs() < 1e-11);
        }
    }
}
