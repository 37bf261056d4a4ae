//! Signed log-magnitude scalars.
//!
//! Several fundamental solutions carry factors such as `exp(kappa x^2 / 4)`
//! that overflow `f64` long before the quantities built from them (ratios,
//! Wronskians, densities) do. Everything overflow-prone is therefore carried
//! as `sign * exp(ln_abs)`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Div, Mul, Neg};

use serde::{Deserialize, Serialize};

/// A real number stored as `sign * exp(ln_abs)`.
///
/// `sign` is one of `-1`, `0`, `+1`; zero is represented with
/// `ln_abs = -inf`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    sign: i8,
    ln_abs: f64,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue {
        sign: 0,
        ln_abs: f64::NEG_INFINITY,
    };
    pub const ONE: LogValue = LogValue {
        sign: 1,
        ln_abs: 0.0,
    };

    /// Builds a value from its parts. A `sign` of zero or an `ln_abs` of
    /// `-inf` yields exact zero.
    pub fn new(sign: i8, ln_abs: f64) -> Self {
        if sign == 0 || ln_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            LogValue {
                sign: sign.signum(),
                ln_abs,
            }
        }
    }

    /// Positive value `exp(ln_abs)`.
    pub fn from_ln(ln_abs: f64) -> Self {
        Self::new(1, ln_abs)
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else if x > 0.0 {
            LogValue {
                sign: 1,
                ln_abs: x.ln(),
            }
        } else {
            LogValue {
                sign: -1,
                ln_abs: (-x).ln(),
            }
        }
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn ln_abs(&self) -> f64 {
        self.ln_abs
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn is_finite(&self) -> bool {
        self.sign == 0 || self.ln_abs.is_finite()
    }

    /// Converts back to `f64`; saturates to `+-inf` or `0` outside range.
    pub fn to_f64(&self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => f64::from(s) * self.ln_abs.exp(),
        }
    }

    pub fn abs(&self) -> Self {
        Self::new(self.sign.abs(), self.ln_abs)
    }

    pub fn recip(&self) -> Self {
        if self.sign == 0 {
            LogValue {
                sign: 1,
                ln_abs: f64::INFINITY,
            }
        } else {
            LogValue {
                sign: self.sign,
                ln_abs: -self.ln_abs,
            }
        }
    }

    /// `|self|^p` carrying the sign of `self` only for `p` integral and odd.
    pub fn powf(&self, p: f64) -> Self {
        if self.sign == 0 {
            return if p == 0.0 { Self::ONE } else { Self::ZERO };
        }
        let sign = if self.sign < 0 && p.fract() == 0.0 && (p as i64) % 2 != 0 {
            -1
        } else {
            1
        };
        Self::new(sign, self.ln_abs * p)
    }

    /// Multiplies by `exp(x)`.
    pub fn scale_exp(&self, x: f64) -> Self {
        Self::new(self.sign, self.ln_abs + x)
    }

    /// Multiplies by an ordinary float.
    pub fn scale(&self, x: f64) -> Self {
        *self * LogValue::from_f64(x)
    }

    /// Signed sum, computed without leaving log space.
    pub fn add(&self, other: &LogValue) -> LogValue {
        self.add_tracked(other).0
    }

    pub fn sub(&self, other: &LogValue) -> LogValue {
        self.add(&-*other)
    }

    /// Signed sum that also reports the cancellation ratio
    /// `max(|a|, |b|) / |a + b|` (1 when no cancellation, `inf` on exact
    /// cancellation).
    pub fn add_tracked(&self, other: &LogValue) -> (LogValue, f64) {
        if self.sign == 0 {
            return (*other, 1.0);
        }
        if other.sign == 0 {
            return (*self, 1.0);
        }
        let (big, small) = if self.ln_abs >= other.ln_abs {
            (self, other)
        } else {
            (other, self)
        };
        if big.ln_abs == f64::INFINITY {
            return (*big, 1.0);
        }
        let d = small.ln_abs - big.ln_abs; // <= 0
        if big.sign == small.sign {
            (LogValue::new(big.sign, big.ln_abs + d.exp().ln_1p()), 1.0)
        } else {
            let r = -(d.exp()); // in [-1, 0]
            if r == -1.0 {
                return (LogValue::ZERO, f64::INFINITY);
            }
            let ln_rest = r.ln_1p();
            (LogValue::new(big.sign, big.ln_abs + ln_rest), (-ln_rest).exp())
        }
    }

    /// Sum of many terms with a single rescale.
    pub fn sum<'a, I: IntoIterator<Item = &'a LogValue>>(terms: I) -> LogValue {
        let terms: Vec<&LogValue> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        let Some(max) = terms
            .iter()
            .map(|t| t.ln_abs)
            .max_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
        else {
            return LogValue::ZERO;
        };
        if !max.is_finite() {
            return terms.into_iter().fold(LogValue::ZERO, |acc, t| acc.add(t));
        }
        let s: f64 = terms
            .iter()
            .map(|t| f64::from(t.sign) * (t.ln_abs - max).exp())
            .sum();
        LogValue::from_f64(s).scale_exp(max)
    }

    /// Compares represented values.
    pub fn cmp_value(&self, other: &LogValue) -> Ordering {
        match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                0 => Ordering::Equal,
                1 => self.ln_abs.partial_cmp(&other.ln_abs).unwrap_or(Ordering::Equal),
                _ => other.ln_abs.partial_cmp(&self.ln_abs).unwrap_or(Ordering::Equal),
            },
            o => o,
        }
    }

    /// Relative difference `|self - other| / |other|`, exact in log space.
    pub fn rel_diff(&self, other: &LogValue) -> f64 {
        if other.is_zero() {
            return if self.is_zero() { 0.0 } else { f64::INFINITY };
        }
        if self.sign != other.sign {
            return if self.is_zero() { 1.0 } else { f64::INFINITY };
        }
        (self.ln_abs - other.ln_abs).exp_m1().abs()
    }
}

impl Default for LogValue {
    fn default() -> Self {
        Self::ZERO
    }
}

impl fmt::Debug for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogValue({:+}·e^{})", self.sign, self.ln_abs)
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign == 0 {
            return write!(f, "0");
        }
        let v = self.to_f64();
        if v.is_finite() && v != 0.0 {
            write!(f, "{v:e}")
        } else {
            let dec = self.ln_abs / std::f64::consts::LN_10;
            let exp = dec.floor();
            let mant = 10f64.powf(dec - exp);
            let s = if self.sign < 0 { "-" } else { "" };
            write!(f, "{s}{mant}e{exp}")
        }
    }
}

impl From<f64> for LogValue {
    fn from(x: f64) -> Self {
        LogValue::from_f64(x)
    }
}

impl Neg for LogValue {
    type Output = LogValue;
    fn neg(self) -> LogValue {
        LogValue {
            sign: -self.sign,
            ln_abs: self.ln_abs,
        }
    }
}

impl Mul for LogValue {
    type Output = LogValue;
    fn mul(self, rhs: LogValue) -> LogValue {
        LogValue::new(self.sign * rhs.sign, self.ln_abs + rhs.ln_abs)
    }
}

impl Div for LogValue {
    type Output = LogValue;
    fn div(self, rhs: LogValue) -> LogValue {
        self * rhs.recip()
    }
}

impl std::ops::Add for LogValue {
    type Output = LogValue;
    fn add(self, rhs: LogValue) -> LogValue {
        LogValue::add(&self, &rhs)
    }
}

impl std::ops::Sub for LogValue {
    type Output = LogValue;
    fn sub(self, rhs: LogValue) -> LogValue {
        LogValue::sub(&self, &rhs)
    }
}
