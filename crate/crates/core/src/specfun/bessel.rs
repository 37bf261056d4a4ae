//! Modified Bessel functions `I_μ` and `K_μ` of real order.
//!
//! Small arguments use the ascending series for `I` and Temme's series for
//! `K`; larger arguments use the continued fraction for `I'/I`, Steed's
//! continued fraction for exponentially scaled `K` and the Wronskian to fix
//! the normalisation of `I`. Very large arguments use the Hankel
//! expansions. Order recurrences are carried with explicit
//! log rescaling so neither large orders nor large arguments overflow.

use std::f64::consts::PI;

use super::gamma::{ln_gamma_pos, temme_gammas};
use crate::error::{domain, Result};
use crate::logvalue::LogValue;

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAXIT: usize = 100_000;
const RESCALE: f64 = 1e250;
const SERIES_SWITCH: f64 = 2.0;

fn check(func: &'static str, mu: f64, z: f64) -> Result<()> {
    if !mu.is_finite() || !z.is_finite() || mu < 0.0 || z < 0.0 {
        return Err(domain(func, format!("need finite mu >= 0 and z >= 0, got mu = {mu}, z = {z}")));
    }
    Ok(())
}

/// `ln I_ν(x)` from the ascending series; positive terms only.
fn ln_i_series(nu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * (nu + k));
        sum += term;
        if term < EPS * sum || k > 10_000.0 {
            break;
        }
        k += 1.0;
    }
    nu * (0.5 * x).ln() - ln_gamma_pos(nu + 1.0) + sum.ln()
}

/// `I'_ν(x)/I_ν(x)` by the modified Lentz method.
fn cf1_ratio(nu: f64, x: f64) -> Result<f64> {
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    let mut h = (nu * xi).max(FPMIN);
    let mut b = xi2 * nu;
    let mut d = 0.0;
    let mut c = h;
    for _ in 0..MAXIT {
        b += xi2;
        d = 1.0 / (b + d);
        c = b + 1.0 / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(crate::Error::NonConvergence {
        what: "Bessel I ratio continued fraction",
        iterations: MAXIT,
    })
}

/// `(K_μ(x), K_{μ+1}(x))` for `|μ| <= 1/2`, `x < 2` by Temme's series.
fn k_temme(xmu: f64, x: f64) -> (f64, f64) {
    let x2 = 0.5 * x;
    let pimu = PI * xmu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = xmu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = temme_gammas(xmu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    let xmu2 = xmu * xmu;
    let mut i = 1.0;
    loop {
        ff = (i * ff + p + q) / (i * i - xmu2);
        c *= dd / i;
        p /= i - xmu;
        q /= i + xmu;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - i * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * EPS || i > 1000.0 {
            break;
        }
        i += 1.0;
    }
    (sum, sum1 * 2.0 / x)
}

/// `(e^x K_μ(x), e^x K_{μ+1}(x))` for `|μ| <= 1/2`, `x >= 2` by Steed's method.
fn k_steed_scaled(xmu: f64, x: f64) -> Result<(f64, f64)> {
    let xmu2 = xmu * xmu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - xmu2;
    let mut c = a1;
    let mut q = c;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..MAXIT {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            let h = a1 * h;
            let kmu = (PI / (2.0 * x)).sqrt() / s;
            let k1 = kmu * (xmu + x + 0.5 - h) / x;
            return Ok((kmu, k1));
        }
    }
    Err(crate::Error::NonConvergence {
        what: "Bessel K continued fraction",
        iterations: MAXIT,
    })
}

/// Upward order recurrence from `(K_xmu, K_{xmu+1})` to `(ln K_ν, ln K_{ν+1})`.
fn k_upward(xmu: f64, x: f64, mut k0: f64, mut k1: f64, nl: usize, ln_offset: f64) -> (f64, f64) {
    let xi2 = 2.0 / x;
    let mut scale = ln_offset;
    for i in 1..=nl {
        let kt = (xmu + i as f64) * xi2 * k1 + k0;
        k0 = k1;
        k1 = kt;
        if k1 > RESCALE {
            k0 /= RESCALE;
            k1 /= RESCALE;
            scale += RESCALE.ln();
        }
    }
    (k0.ln() + scale, k1.ln() + scale)
}

/// `(ln(e^{-x} I_ν(x)), ln(e^x K_ν(x)))` from the Hankel expansions.
fn hankel_scaled(nu: f64, x: f64) -> (f64, f64) {
    let m = 4.0 * nu * nu;
    let (mut si, mut sk) = (1.0, 1.0);
    let mut term = 1.0f64;
    for k in 1..60 {
        let kf = k as f64;
        let next = term * (m - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sk += term;
        si += if k % 2 == 1 { -term } else { term };
        if term.abs() < 1e-17 {
            break;
        }
    }
    let lp = 0.5 * (2.0 * PI * x).ln();
    (-lp + si.ln(), 0.5 * (PI / (2.0 * x)).ln() + sk.ln())
}

/// Hankel expansions `(ln I_ν(x), ln K_ν(x))` for `x` large against `ν²`.
fn hankel(nu: f64, x: f64) -> (f64, f64) {
    let (li, lk) = hankel_scaled(nu, x);
    (li + x, lk - x)
}

fn use_hankel(nu: f64, x: f64) -> bool {
    x > 1000.0_f64.max(2.0 * nu * nu)
}

/// `(ln I_ν(x), ln K_ν(x), ln K_{ν+1}(x))` for `ν >= 0`, `x > 0`.
fn bessik(nu: f64, x: f64) -> Result<(f64, f64, f64)> {
    if use_hankel(nu + 1.0, x) {
        let (li, lk) = hankel(nu, x);
        return Ok((li, lk, hankel(nu + 1.0, x).1));
    }
    let nl = (nu + 0.5) as usize;
    let xmu = nu - nl as f64;
    if x < SERIES_SWITCH {
        let (k0, k1) = k_temme(xmu, x);
        let (lk, lk1) = k_upward(xmu, x, k0, k1, nl, 0.0);
        return Ok((ln_i_series(nu, x), lk, lk1));
    }
    let xi = 1.0 / x;
    let f = cf1_ratio(nu, x)?;
    // Downward recurrence of (I, I') from order ν to xmu, unnormalised.
    let mut ril = 1.0f64;
    let mut ripl = f;
    let mut fact = nu * xi;
    let mut scale = 0.0;
    for _ in 0..nl {
        let ritemp = fact * ril + ripl;
        fact -= xi;
        ripl = fact * ritemp + ril;
        ril = ritemp;
        if ril.abs() > RESCALE {
            ril /= RESCALE;
            ripl /= RESCALE;
            scale += RESCALE.ln();
        }
    }
    let fmu = ripl / ril;
    let (kmu, k1) = k_steed_scaled(xmu, x)?;
    let kmup = xmu * xi * kmu - k1;
    // Wronskian I K' - I' K = -1/x fixes I_xmu.
    let ln_imu = x + (xi / (fmu * kmu - kmup)).ln();
    let ln_i = ln_imu - (ril.abs().ln() + scale);
    let (lk, lk1) = k_upward(xmu, x, kmu, k1, nl, -x);
    Ok((ln_i, lk, lk1))
}

/// Modified Bessel function of the first kind `I_μ(z)`.
pub fn bessel_i(mu: f64, z: f64) -> Result<LogValue> {
    check("bessel_i", mu, z)?;
    if z == 0.0 {
        return Ok(if mu == 0.0 { LogValue::ONE } else { LogValue::ZERO });
    }
    if z < SERIES_SWITCH {
        return Ok(LogValue::from_ln(ln_i_series(mu, z)));
    }
    Ok(LogValue::from_ln(bessik(mu, z)?.0))
}

/// Exponentially scaled `e^{-z} I_μ(z)`, accurate for arguments where
/// `ln I_μ(z)` and `z` are both huge.
pub fn bessel_i_scaled(mu: f64, z: f64) -> Result<LogValue> {
    check("bessel_i_scaled", mu, z)?;
    if use_hankel(mu + 1.0, z) {
        let (li, _) = hankel_scaled(mu, z);
        return Ok(LogValue::from_ln(li));
    }
    Ok(bessel_i(mu, z)?.scale_exp(-z))
}

/// Modified Bessel function of the second kind `K_μ(z)`.
pub fn bessel_k(mu: f64, z: f64) -> Result<LogValue> {
    check("bessel_k", mu, z)?;
    if z == 0.0 {
        return Err(domain("bessel_k", "K is singular at z = 0"));
    }
    Ok(LogValue::from_ln(bessik(mu, z)?.1))
}

/// `(I_μ(z), K_μ(z))` from a single evaluation.
pub fn bessel_ik(mu: f64, z: f64) -> Result<(LogValue, LogValue)> {
    check("bessel_ik", mu, z)?;
    if z == 0.0 {
        return Err(domain("bessel_ik", "K is singular at z = 0"));
    }
    let (li, lk, _) = bessik(mu, z)?;
    Ok((LogValue::from_ln(li), LogValue::from_ln(lk)))
}

/// `d/dz I_μ(z) = I_{μ+1}(z) + (μ/z) I_μ(z)`.
pub fn bessel_i_deriv(mu: f64, z: f64) -> Result<LogValue> {
    check("bessel_i_deriv", mu, z)?;
    if z == 0.0 {
        return Ok(if mu == 1.0 {
            LogValue::from_f64(0.5)
        } else if mu > 0.0 && mu < 1.0 {
            LogValue::from_ln(f64::INFINITY)
        } else {
            LogValue::ZERO
        });
    }
    let i1 = bessel_i(mu + 1.0, z)?;
    if mu == 0.0 {
        return Ok(i1);
    }
    Ok(i1 + bessel_i(mu, z)?.scale(mu / z))
}

/// `d/dz K_μ(z) = -(K_{|μ-1|}(z) + K_{μ+1}(z)) / 2`.
pub fn bessel_k_deriv(mu: f64, z: f64) -> Result<LogValue> {
    check("bessel_k_deriv", mu, z)?;
    if z == 0.0 {
        return Err(domain("bessel_k_deriv", "K is singular at z = 0"));
    }
    let a = bessel_k((mu - 1.0).abs(), z)?;
    let b = bessel_k(mu + 1.0, z)?;
    Ok(-(a + b).scale(0.5))
}
