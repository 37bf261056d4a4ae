//! Kummer confluent hypergeometric functions `M(a, b, z)` and `U(a, b, z)`.
//!
//! `M` is summed from its ascending series with log rescaling, switching to
//! the large-argument expansion once it converges. `U` uses, in order of
//! preference, its large-argument expansion, a continued fraction for
//! `U(a+1, b, z)/U(a, b, z)` normalised through the Wronskian with `M`, and
//! for small `z` the connection formula in terms of two `M` functions (the
//! logarithmic series when `b` is an integer). When `b` is large compared
//! with `a + z` the recurrence behind the continued fraction is unstable, so
//! the Laplace integral is evaluated by adaptive quadrature instead.

use super::gamma::{digamma, gamma, ln_gamma_pos, rgamma};
use crate::error::{domain, Error, Result};
use crate::logvalue::LogValue;
use crate::numerics::quad::{integrate_with_points, QuadratureSpec, Transform};
use crate::numerics::root::{find_root, RootSpec};

const EPS: f64 = 1e-16;
const RESCALE: f64 = 1e250;
const MAX_TERMS: usize = 200_000;
/// Half-width of the window around integer `b` handled by interpolation.
const NEAR_INT: f64 = 1e-5;

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

/// Ascending series of `M(a, b, z)` for any sign of `a`, `b`.
fn m_series(a: f64, b: f64, z: f64) -> Result<LogValue> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut scale = 0.0;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        let ratio = (a + kf) / (b + kf) * z / (kf + 1.0);
        term *= ratio;
        sum += term;
        if sum.abs() > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            scale += RESCALE.ln();
        }
        if term == 0.0 || (term.abs() < EPS * sum.abs() && ratio.abs() < 0.5) {
            return Ok(LogValue::from_f64(sum).scale_exp(scale));
        }
    }
    Err(Error::NonConvergence {
        what: "Kummer M series",
        iterations: MAX_TERMS,
    })
}

/// Large-`z` expansion `Γ(b)/Γ(a) e^z z^(a-b) Σ (b-a)_k (1-a)_k / (k! z^k)`,
/// returned only when the truncated series has converged.
fn m_asymptotic(a: f64, b: f64, z: f64) -> Option<LogValue> {
    if is_nonpositive_integer(a) {
        return None;
    }
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 0..200 {
        let kf = k as f64;
        let next = term * (b - a + kf) * (1.0 - a + kf) / ((kf + 1.0) * z);
        if next.abs() > term.abs() {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() < EPS * sum.abs() {
            let pre = gamma(b).ok()? * rgamma(a);
            return Some(pre * LogValue::from_f64(sum).scale_exp(z + (a - b) * z.ln()));
        }
    }
    None
}

/// Kummer's function `M(a, b, z)` for `z >= 0`.
pub fn kummer_m(a: f64, b: f64, z: f64) -> Result<LogValue> {
    if !a.is_finite() || !b.is_finite() || !z.is_finite() || z < 0.0 {
        return Err(domain("kummer_m", format!("need finite a, b and z >= 0, got ({a}, {b}, {z})")));
    }
    if is_nonpositive_integer(b) {
        return Err(domain("kummer_m", format!("b = {b} is a non-positive integer")));
    }
    if z == 0.0 || a == 0.0 {
        return Ok(LogValue::ONE);
    }
    if z > 40.0 && a > 0.0 && b > 0.0 {
        if let Some(v) = m_asymptotic(a, b, z) {
            return Ok(v);
        }
    }
    m_series(a, b, z)
}

/// `d/dz M(a, b, z) = (a/b) M(a+1, b+1, z)`.
pub fn kummer_m_deriv(a: f64, b: f64, z: f64) -> Result<LogValue> {
    if is_nonpositive_integer(b) {
        return Err(domain("kummer_m_deriv", format!("b = {b} is a non-positive integer")));
    }
    Ok(kummer_m(a + 1.0, b + 1.0, z)?.scale(a / b))
}

/// `z^(-a) Σ (a)_k (a-b+1)_k / (k! (-z)^k)` when the expansion converges.
fn u_asymptotic(a: f64, b: f64, z: f64) -> Option<LogValue> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 0..500 {
        let kf = k as f64;
        let next = -term * (a + kf) * (a - b + 1.0 + kf) / ((kf + 1.0) * z);
        if next.abs() > term.abs() && k > 0 {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() < EPS * sum.abs() {
            return Some(LogValue::from_f64(sum).scale_exp(-a * z.ln()));
        }
    }
    None
}

/// `U(a+1, b, z) / U(a, b, z)` by backward recurrence in `a`, doubling the
/// starting depth until the ratio settles.
fn u_ratio(a: f64, b: f64, z: f64) -> Result<f64> {
    let backward = |n: usize| {
        let mut r = 0.0f64;
        for j in (1..=n).rev() {
            let aj = a + j as f64;
            let bj = 2.0 * aj + z - b;
            let cj = aj * (aj - b + 1.0);
            r = 1.0 / (bj - cj * r);
        }
        r
    };
    let mut n = 32;
    let mut prev = backward(n);
    while n < 8_000_000 {
        n *= 2;
        let r = backward(n);
        if (r - prev).abs() <= 1e-15 * r.abs() {
            return Ok(r);
        }
        prev = r;
    }
    Err(Error::NonConvergence {
        what: "Kummer U ratio recurrence",
        iterations: n,
    })
}

/// `U` from the ratio `U(a+1)/U(a)` and the Wronskian
/// `M U' - M' U = -Γ(b) z^(-b) e^z / Γ(a)`, using
/// `z U'(a, b, z) = -a U(a, b, z) + a (a-b+1) U(a+1, b, z)`.
fn u_wronskian(a: f64, b: f64, z: f64) -> Result<LogValue> {
    let r = u_ratio(a, b, z)?;
    let m = kummer_m(a, b, z)?;
    let mp = kummer_m_deriv(a, b, z)?;
    let factor = 1.0 - (a - b + 1.0) * r;
    let denom = mp + m.scale(a / z * factor);
    let num = LogValue::from_ln(ln_gamma_pos(b) - ln_gamma_pos(a) - b * z.ln() + z);
    Ok(num / denom)
}

/// Connection formula for non-integer `b`:
/// `U = Γ(1-b)/Γ(a-b+1) M(a,b,z) + Γ(b-1)/Γ(a) z^(1-b) M(a-b+1, 2-b, z)`.
fn u_two_m(a: f64, b: f64, z: f64) -> Result<LogValue> {
    let first = gamma(1.0 - b)? * rgamma(a - b + 1.0) * kummer_m(a, b, z)?;
    let second = gamma(b - 1.0)? * rgamma(a) * m_series(a - b + 1.0, 2.0 - b, z)?.scale_exp((1.0 - b) * z.ln());
    Ok(first + second)
}

/// Logarithmic series for `b = n + 1`, `n >= 0` an integer.
fn u_integer_b(a: f64, n: usize, z: f64) -> Result<LogValue> {
    let nf = n as f64;
    let lnz = z.ln();
    // ψ(a+k), ψ(1+k), ψ(n+1+k) advanced by their recurrences.
    let mut psi_a = digamma(a)?;
    let mut psi_1 = digamma(1.0)?;
    let mut psi_n = digamma(nf + 1.0)?;
    let mut coef = 1.0f64; // (a)_k z^k / ((n+1)_k k!)
    let mut sum = 0.0f64;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        let term = coef * (lnz + psi_a - psi_1 - psi_n);
        sum += term;
        if k > 2 && term.abs() < EPS * sum.abs() && coef.abs() < EPS {
            break;
        }
        if k > 2 && coef == 0.0 {
            break;
        }
        coef *= (a + kf) * z / ((nf + 1.0 + kf) * (kf + 1.0));
        psi_a += 1.0 / (a + kf);
        psi_1 += 1.0 / (1.0 + kf);
        psi_n += 1.0 / (nf + 1.0 + kf);
    }
    let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
    let ln_nfact = ln_gamma_pos(nf + 1.0);
    let log_part = rgamma(a - nf) * LogValue::from_f64(sign * sum).scale_exp(-ln_nfact);
    let mut terms = vec![log_part];
    let ra = rgamma(a);
    for k in 1..=n {
        let kf = k as f64;
        let mut poch = LogValue::ONE;
        for j in 0..(n - k) {
            poch = poch * LogValue::from_f64(1.0 - a + kf + j as f64);
        }
        let t = ra
            * poch
            * LogValue::from_ln(ln_gamma_pos(kf) - ln_gamma_pos(nf - kf + 1.0) - kf * lnz);
        terms.push(t);
    }
    Ok(LogValue::sum(terms.iter()))
}

fn u_small(a: f64, b: f64, z: f64) -> Result<LogValue> {
    let n = b.round();
    let off = b - n;
    if off == 0.0 {
        return u_integer_b(a, n as usize - 1, z);
    }
    if off.abs() < NEAR_INT {
        // Quadratic interpolation in b through n - d, n, n + d.
        let d = 2.0 * NEAR_INT;
        let g0 = u_integer_b(a, n as usize - 1, z)?;
        let gm = kummer_u(a, n - d, z)?;
        let gp = kummer_u(a, n + d, z)?;
        let rm = (gm.ln_abs() - g0.ln_abs()).exp();
        let rp = (gp.ln_abs() - g0.ln_abs()).exp();
        let t = off / d;
        let ratio = 1.0 + t * (rp - rm) / 2.0 + t * t * (rp - 2.0 + rm) / 2.0;
        return Ok(g0.scale(ratio));
    }
    u_two_m(a, b, z)
}

/// Tricomi's function `U(a, b, z)` for `a > 0`, `z > 0`.
/// `U = Γ(a)^{-1} ∫_R exp(g(s)) ds` with
/// `g(s) = a s - z e^s + (b - a - 1) ln(1 + e^s)`, scaled by the peak of `g`.
fn u_integral(a: f64, b: f64, z: f64) -> Result<LogValue> {
    let c = b - a - 1.0;
    let softplus = |s: f64| if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
    let g = |s: f64| if s > 700.0 { f64::NEG_INFINITY } else { a * s - z * s.exp() + c * softplus(s) };
    let dg = |s: f64| {
        let t = s.exp();
        a - z * t + c * t / (1.0 + t)
    };
    // dg -> a > 0 as s -> -inf and dg -> -inf as s -> inf.
    let (mut lo, mut hi) = (-1.0, 1.0);
    while dg(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let peak = find_root(dg, &RootSpec::new(lo, hi))?;
    let gmax = g(peak);
    let spec = QuadratureSpec::new(1e-300, 1e-13).with_transform(Transform::InfiniteMap);
    let r = integrate_with_points(|s| (g(s) - gmax).exp(), f64::NEG_INFINITY, f64::INFINITY, &[peak], &spec)?;
    let v = r.require()?;
    Ok(LogValue::from_ln(gmax + v.ln() - ln_gamma_pos(a)))
}

pub fn kummer_u(a: f64, b: f64, z: f64) -> Result<LogValue> {
    if !a.is_finite() || !b.is_finite() || !z.is_finite() || a <= 0.0 || z <= 0.0 {
        return Err(domain("kummer_u", format!("need a > 0, z > 0 and finite b, got ({a}, {b}, {z})")));
    }
    if b < 1.0 {
        // Kummer transformation U(a, b, z) = z^(1-b) U(a-b+1, 2-b, z).
        return Ok(kummer_u(a - b + 1.0, 2.0 - b, z)?.scale_exp((1.0 - b) * z.ln()));
    }
    if z >= 20.0 {
        if let Some(v) = u_asymptotic(a, b, z) {
            return Ok(v);
        }
    }
    if z <= 1.0 && a * z <= 2.0 {
        return u_small(a, b, z);
    }
    if b > a + z + 8.0 {
        return u_integral(a, b, z);
    }
    u_wronskian(a, b, z)
}

/// `d/dz U(a, b, z) = -a U(a+1, b+1, z)`.
pub fn kummer_u_deriv(a: f64, b: f64, z: f64) -> Result<LogValue> {
    Ok(-kummer_u(a + 1.0, b + 1.0, z)?.scale(a))
}
