//! Whittaker's parabolic cylinder function `D_ν(z)` for orders `ν <= 0`.
//!
//! For `z > 0`, `D_{-υ}(z) = 2^(-υ/2) e^(-z²/4) U(υ/2, 1/2, z²/2)`. For
//! `z <= 0` the even/odd decomposition in `M` is used; with `y = -z >= 0`
//! both terms are positive, so there is no cancellation on either side.

use std::f64::consts::{LN_2, PI};

use super::gamma::rgamma;
use super::kummer::{kummer_m, kummer_u};
use crate::error::{domain, Result};
use crate::logvalue::LogValue;

/// `D_order(z)` for `order <= 0`.
pub fn pcf_d(order: f64, z: f64) -> Result<LogValue> {
    if !order.is_finite() || !z.is_finite() {
        return Err(domain("pcf_d", format!("non-finite input ({order}, {z})")));
    }
    if order > 0.0 {
        return Err(domain("pcf_d", format!("order must be <= 0, got {order}")));
    }
    let ups = -order;
    let gauss = -0.25 * z * z;
    if ups == 0.0 {
        return Ok(LogValue::from_ln(gauss));
    }
    let pre = -0.5 * ups * LN_2 + gauss;
    let w = 0.5 * z * z;
    if z > 0.0 {
        return Ok(kummer_u(0.5 * ups, 0.5, w)?.scale_exp(pre));
    }
    let y = -z;
    let even = rgamma(0.5 * (ups + 1.0)) * kummer_m(0.5 * ups, 0.5, w)?.scale(PI.sqrt());
    let odd = if y == 0.0 {
        LogValue::ZERO
    } else {
        rgamma(0.5 * ups) * kummer_m(0.5 * (ups + 1.0), 1.5, w)?.scale((2.0 * PI).sqrt() * y)
    };
    Ok((even + odd).scale_exp(pre))
}

/// `d/dz D_{-υ}(z) = -(z/2) D_{-υ}(z) - υ D_{-υ-1}(z)`.
pub fn pcf_d_deriv(order: f64, z: f64) -> Result<LogValue> {
    let ups = -order;
    let d0 = pcf_d(order, z)?.scale(-0.5 * z);
    if ups == 0.0 {
        return Ok(d0);
    }
    let d1 = pcf_d(order - 1.0, z)?.scale(-ups);
    Ok(d0 + d1)
}
