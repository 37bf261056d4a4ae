//! Bracketed root finding (Brent's method).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootSpec {
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_iter: usize,
}

impl RootSpec {
    pub fn new(bracket_lo: f64, bracket_hi: f64) -> Self {
        RootSpec {
            bracket_lo,
            bracket_hi,
            x_tol: 1e-14,
            f_tol: 0.0,
            max_iter: 200,
        }
    }

    pub fn with_tolerances(mut self, x_tol: f64, f_tol: f64) -> Self {
        self.x_tol = x_tol;
        self.f_tol = f_tol;
        self
    }
}

/// Finds a zero of `f` in `[bracket_lo, bracket_hi]`.
///
/// Stops when `|f(x)| <= f_tol` or the bracket is narrower than
/// `x_tol` (relative to `max(1, |x|)`).
pub fn find_root(f: impl Fn(f64) -> f64, spec: &RootSpec) -> Result<f64> {
    let (mut a, mut b) = (spec.bracket_lo, spec.bracket_hi);
    if !(a < b) || !(spec.x_tol > 0.0) || spec.f_tol < 0.0 {
        return Err(Error::InvalidParameter(format!("invalid root spec {spec:?}")));
    }
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa * fb < 0.0) {
        return Err(Error::InvalidBracket {
            lo: a,
            hi: b,
            flo: fa,
            fhi: fb,
        });
    }
    let mut c = b;
    let mut fc = fb;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..spec.max_iter {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * spec.x_tol * b.abs().max(1.0);
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= spec.f_tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::NonConvergence {
        what: "Brent root finder",
        iterations: spec.max_iter,
    })
}

/// Grows `[lo, hi]` geometrically (factor 2 in width, clipped to the
/// open interval `(min, max)`) until `f` changes sign across it.
pub fn expand_bracket(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    min: f64,
    max: f64,
    max_steps: usize,
) -> Result<(f64, f64)> {
    let (mut flo, mut fhi) = (f(lo), f(hi));
    for _ in 0..max_steps {
        if flo * fhi <= 0.0 {
            return Ok((lo, hi));
        }
        let w = hi - lo;
        // Move the end whose value is closer to zero.
        if flo.abs() < fhi.abs() {
            lo = if min.is_finite() && lo - w <= min { 0.5 * (lo + min) } else { lo - w };
            flo = f(lo);
        } else {
            hi = if max.is_finite() && hi + w >= max { 0.5 * (hi + max) } else { hi + w };
            fhi = f(hi);
        }
    }
    Err(Error::InvalidBracket { lo, hi, flo, fhi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_roots() {
        let r = find_root(|x| x - 3.0, &RootSpec::new(0.0, 10.0)).unwrap();
        assert!((r - 3.0).abs() < 1e-13);
        let r = find_root(f64::cos, &RootSpec::new(1.0, 2.0)).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
    }

    #[test]
    fn invalid_bracket() {
        let e = find_root(|x| x * x + 1.0, &RootSpec::new(-1.0, 1.0)).unwrap_err();
        assert!(matches!(e, Error::InvalidBracket { .. }));
    }

    #[test]
    fn bracket_expansion() {
        let (lo, hi) = expand_bracket(|x| x - 1000.0, 0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY, 60).unwrap();
        assert!(lo <= 1000.0 && hi >= 1000.0);
        let (lo, hi) = expand_bracket(|x| x - 1e-9, 0.5, 1.0, 0.0, f64::INFINITY, 100).unwrap();
        assert!(lo > 0.0 && lo <= 1e-9 && hi >= 1e-9);
    }

    proptest! {
        #[test]
        fn inverts_tabulated_monotone_map(x0 in 0.01f64..20.0) {
            // Piecewise-linear interpolant of a strictly increasing sample.
            let xs: Vec<f64> = (0..=200).map(|i| 0.1 * i as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + x).collect();
            let map = |x: f64| {
                let i = ((x / 0.1) as usize).min(199);
                let t = (x - xs[i]) / 0.1;
                ys[i] + t * (ys[i + 1] - ys[i])
            };
            let target = map(x0);
            let r = find_root(|x| map(x) - target, &RootSpec::new(0.0, 20.0).with_tolerances(1e-12, 0.0)).unwrap();
            prop_assert!((r - x0).abs() < 1e-10);
        }
    }
}
