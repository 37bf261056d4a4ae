//! The three underlying diffusions: squared Bessel (SQB), Cox-Ingersoll-Ross
//! (CIR) and Ornstein-Uhlenbeck (OU).
//!
//! Every quantity that can leave the `f64` exponent range (fundamental
//! solutions, densities, Wronskians) is returned as a [`LogValue`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::logvalue::LogValue;
use crate::specfun::{bessel_i, bessel_i_scaled, bessel_k, gamma, gamma_ln, kummer_m, kummer_u, pcf_d, pochhammer, rgamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Sqb,
    Cir,
    Ou,
}

/// Raw model parameters as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub nu0: f64,
    #[serde(default)]
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
}

/// A validated underlying diffusion with its derived constants.
///
/// For OU a nonzero `lambda0` is handled by the shift `x -> x - lambda0/lambda1`;
/// all public methods take and return unshifted coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParams", into = "ModelParams")]
pub struct UnderlyingModel {
    params: ModelParams,
    mu: f64,
    kappa: f64,
    shift: f64,
}

impl From<UnderlyingModel> for ModelParams {
    fn from(m: UnderlyingModel) -> Self {
        m.params
    }
}

impl TryFrom<ModelParams> for UnderlyingModel {
    type Error = Error;
    fn try_from(p: ModelParams) -> Result<Self> {
        UnderlyingModel::new(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn flip(self) -> Self {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Endpoint {
    Left,
    Right,
}

/// Spectral parameter `s > 0` at which the fundamental solutions are taken.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SpectralParam(f64);

impl SpectralParam {
    pub fn new(s: f64) -> Result<Self> {
        if s.is_finite() && s > 0.0 {
            Ok(SpectralParam(s))
        } else {
            Err(Error::InvalidParameter(format!("spectral parameter must be positive and finite, got {s}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `s / lambda1` for CIR and OU.
    pub fn upsilon(self, model: &UnderlyingModel) -> Option<f64> {
        match model.kind() {
            ModelKind::Sqb => None,
            _ => Some(self.0 / model.lambda1()),
        }
    }
}

impl TryFrom<f64> for SpectralParam {
    type Error = Error;
    fn try_from(s: f64) -> Result<Self> {
        SpectralParam::new(s)
    }
}

impl From<SpectralParam> for f64 {
    fn from(s: SpectralParam) -> f64 {
        s.0
    }
}

/// Signed Wronskian of two fundamental solutions with its cancellation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossWronskian {
    pub value: LogValue,
    /// `max(|p1|, |p2|) / |p1 - p2|` for the two products forming the Wronskian.
    pub cancellation: f64,
    /// Cancellation exceeded `1e12`.
    pub precision_lost: bool,
    /// The value was replaced by the leading asymptotic term.
    pub asymptotic: bool,
}

/// Threshold on the cancellation ratio beyond which a Wronskian is flagged.
pub const CANCELLATION_LIMIT: f64 = 1e12;

/// Leading-order behaviour `sign * C * u^power * ln(1/u)^[log] * exp(a sqrt(u) + b u + c u^2)`
/// of a function near an endpoint, where `u` is `x` for SQB/CIR and `|x - shift|` for OU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadingTerm {
    pub sign: i8,
    pub ln_coeff: f64,
    pub power: f64,
    pub log_factor: bool,
    pub sqrt_rate: f64,
    pub linear_rate: f64,
    pub quad_rate: f64,
    pub shift: f64,
}

impl LeadingTerm {
    fn new(coeff: LogValue, power: f64, shift: f64) -> Self {
        LeadingTerm {
            sign: coeff.sign(),
            ln_coeff: coeff.ln_abs(),
            power,
            log_factor: false,
            sqrt_rate: 0.0,
            linear_rate: 0.0,
            quad_rate: 0.0,
            shift,
        }
    }

    pub fn eval(&self, x: f64) -> LogValue {
        if self.sign == 0 {
            return LogValue::ZERO;
        }
        let u = (x - self.shift).abs();
        let mut ln = self.ln_coeff + self.power * u.ln() + self.sqrt_rate * u.sqrt() + self.linear_rate * u + self.quad_rate * u * u;
        if self.log_factor {
            ln += (-u.ln()).ln();
        }
        LogValue::new(self.sign, ln)
    }

    fn negated(mut self) -> Self {
        self.sign = -self.sign;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitMagnitude {
    Zero,
    Finite,
    Infinite,
}

/// Limit of a Wronskian at an endpoint: `sign * magnitude`, with `sign = 0`
/// meaning the Wronskian vanishes identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WronskianLimit {
    pub sign: i8,
    pub magnitude: LimitMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticWronskian {
    pub leading: LeadingTerm,
    pub limit: WronskianLimit,
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

impl UnderlyingModel {
    pub fn new(p: ModelParams) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(p.nu0.is_finite() && p.nu0 > 0.0) {
            return bad(format!("nu0 must be positive, got {}", p.nu0));
        }
        if !p.lambda0.is_finite() {
            return bad(format!("lambda0 must be finite, got {}", p.lambda0));
        }
        let nu2 = p.nu0 * p.nu0;
        let lambda1 = p.lambda1.unwrap_or(0.0);
        match p.kind {
            ModelKind::Sqb => {
                if lambda1 != 0.0 {
                    return bad("SQB takes no lambda1".into());
                }
                let mu = 2.0 * p.lambda0 / nu2 - 1.0;
                if !(mu > 0.0) {
                    return bad(format!("SQB needs lambda0 > nu0^2/2 (mu > 0), got mu = {mu}"));
                }
                Ok(UnderlyingModel {
                    params: ModelParams { lambda1: None, ..p },
                    mu,
                    kappa: 0.0,
                    shift: 0.0,
                })
            }
            ModelKind::Cir => {
                if !(lambda1.is_finite() && lambda1 > 0.0) {
                    return bad(format!("CIR needs lambda1 > 0, got {lambda1}"));
                }
                let mu = 2.0 * p.lambda0 / nu2 - 1.0;
                if !(mu > 0.0) {
                    return bad(format!("CIR needs lambda0 > nu0^2/2 (mu > 0), got mu = {mu}"));
                }
                Ok(UnderlyingModel {
                    params: p,
                    mu,
                    kappa: 2.0 * lambda1 / nu2,
                    shift: 0.0,
                })
            }
            ModelKind::Ou => {
                if !(lambda1.is_finite() && lambda1 > 0.0) {
                    return bad(format!("OU needs lambda1 > 0, got {lambda1}"));
                }
                Ok(UnderlyingModel {
                    params: p,
                    mu: 0.0,
                    kappa: 2.0 * lambda1 / nu2,
                    shift: p.lambda0 / lambda1,
                })
            }
        }
    }

    pub fn sqb(nu0: f64, lambda0: f64) -> Result<Self> {
        Self::new(ModelParams {
            kind: ModelKind::Sqb,
            nu0,
            lambda0,
            lambda1: None,
        })
    }

    pub fn cir(nu0: f64, lambda0: f64, lambda1: f64) -> Result<Self> {
        Self::new(ModelParams {
            kind: ModelKind::Cir,
            nu0,
            lambda0,
            lambda1: Some(lambda1),
        })
    }

    pub fn ou(nu0: f64, lambda0: f64, lambda1: f64) -> Result<Self> {
        Self::new(ModelParams {
            kind: ModelKind::Ou,
            nu0,
            lambda0,
            lambda1: Some(lambda1),
        })
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind
    }

    pub fn nu0(&self) -> f64 {
        self.params.nu0
    }

    pub fn lambda0(&self) -> f64 {
        self.params.lambda0
    }

    /// Mean-reversion rate; zero for SQB.
    pub fn lambda1(&self) -> f64 {
        self.params.lambda1.unwrap_or(0.0)
    }

    /// `2 lambda0 / nu0^2 - 1` (SQB and CIR).
    pub fn mu(&self) -> Option<f64> {
        (self.kind() != ModelKind::Ou).then_some(self.mu)
    }

    /// `2 lambda1 / nu0^2` (CIR and OU).
    pub fn kappa(&self) -> Option<f64> {
        (self.kind() != ModelKind::Sqb).then_some(self.kappa)
    }

    /// `lambda0 / lambda1` for OU, zero otherwise.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// The open state space `(l, r)`.
    pub fn state_space(&self) -> (f64, f64) {
        match self.kind() {
            ModelKind::Ou => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (l, r) = self.state_space();
        x > l && x < r
    }

    /// Internal coordinate (OU shift removed), with a domain check.
    fn coord(&self, func: &'static str, x: f64) -> Result<f64> {
        if !self.contains(x) {
            let (l, r) = self.state_space();
            return Err(domain(func, format!("x = {x} outside ({l}, {r})")));
        }
        Ok(x - self.shift)
    }

    fn upsilon_of(&self, s: SpectralParam) -> f64 {
        s.value() / self.lambda1()
    }

    pub fn drift(&self, x: f64) -> Result<f64> {
        let _ = self.coord("drift", x)?;
        Ok(self.lambda0() - self.lambda1() * x)
    }

    pub fn diffusion(&self, x: f64) -> Result<f64> {
        let y = self.coord("diffusion", x)?;
        Ok(match self.kind() {
            ModelKind::Ou => self.nu0(),
            _ => self.nu0() * y.sqrt(),
        })
    }

    /// Scale density.
    pub fn scale_density(&self, x: f64) -> Result<LogValue> {
        let y = self.coord("scale_density", x)?;
        Ok(LogValue::from_ln(self.ln_scale(y)))
    }

    /// Speed density `2 / (nu^2 s)`.
    pub fn speed_density(&self, x: f64) -> Result<LogValue> {
        let y = self.coord("speed_density", x)?;
        Ok(LogValue::from_ln(self.ln_speed(y)))
    }

    fn ln_scale(&self, y: f64) -> f64 {
        match self.kind() {
            ModelKind::Sqb => -(self.mu + 1.0) * y.ln(),
            ModelKind::Cir => -(self.mu + 1.0) * y.ln() + self.kappa * y,
            ModelKind::Ou => 0.5 * self.kappa * y * y,
        }
    }

    fn ln_speed(&self, y: f64) -> f64 {
        let c = (2.0 / (self.nu0() * self.nu0())).ln();
        match self.kind() {
            ModelKind::Sqb => c + self.mu * y.ln(),
            ModelKind::Cir => c + self.mu * y.ln() - self.kappa * y,
            ModelKind::Ou => c - 0.5 * self.kappa * y * y,
        }
    }

    /// `n`-th derivative (`n <= 2`) of a fundamental solution at internal coordinate `y`.
    fn phi_n(&self, s: SpectralParam, br: Branch, y: f64, n: usize) -> Result<LogValue> {
        let nf = n as f64;
        match self.kind() {
            ModelKind::Sqb => {
                // d^n/dx^n x^{-mu/2} Z_mu(c sqrt x) = (±c/2)^n x^{-(mu+n)/2} Z_{mu+n}(c sqrt x).
                let c = 2.0 * (2.0 * s.value()).sqrt() / self.nu0();
                let z = c * y.sqrt();
                let order = self.mu + nf;
                let (f, sign) = match br {
                    Branch::Plus => (bessel_i(order, z)?, 1.0),
                    Branch::Minus => (bessel_k(order, z)?, if n % 2 == 1 { -1.0 } else { 1.0 }),
                };
                Ok(f.scale_exp(nf * (0.5 * c).ln() - 0.5 * order * y.ln()).scale(sign))
            }
            ModelKind::Cir => {
                let u = self.upsilon_of(s);
                let b = self.mu + 1.0;
                let z = self.kappa * y;
                let k = LogValue::from_f64(self.kappa).powf(nf);
                match br {
                    Branch::Plus => Ok(kummer_m(u + nf, b + nf, z)? * k * pochhammer(u, n) / pochhammer(b, n)),
                    Branch::Minus => {
                        let v = kummer_u(u + nf, b + nf, z)? * k * pochhammer(u, n);
                        Ok(if n % 2 == 1 { -v } else { v })
                    }
                }
            }
            ModelKind::Ou => {
                // phi^-(y) = e^{z^2/4} D_{-u}(z), z = sqrt(kappa) y, and phi^+(y) = phi^-(-y).
                let u = self.upsilon_of(s);
                let sk = self.kappa.sqrt();
                let z = sk * y;
                let factor = LogValue::from_f64(sk).powf(nf) * pochhammer(u, n);
                match br {
                    Branch::Minus => {
                        let v = pcf_d(-u - nf, z)?.scale_exp(0.25 * z * z) * factor;
                        Ok(if n % 2 == 1 { -v } else { v })
                    }
                    Branch::Plus => Ok(pcf_d(-u - nf, -z)?.scale_exp(0.25 * z * z) * factor),
                }
            }
        }
    }

    /// Fundamental solution `phi^±_s(x)`.
    pub fn phi(&self, s: SpectralParam, br: Branch, x: f64) -> Result<LogValue> {
        let y = self.coord("phi", x)?;
        self.phi_n(s, br, y, 0)
    }

    /// First derivative of `phi^±_s`, from the differential recurrences.
    pub fn phi_deriv(&self, s: SpectralParam, br: Branch, x: f64) -> Result<LogValue> {
        let y = self.coord("phi_deriv", x)?;
        self.phi_n(s, br, y, 1)
    }

    /// Second derivative of `phi^±_s`, from the recurrences applied twice.
    pub fn phi_deriv2(&self, s: SpectralParam, br: Branch, x: f64) -> Result<LogValue> {
        let y = self.coord("phi_deriv2", x)?;
        self.phi_n(s, br, y, 2)
    }

    /// `ln w_s`, where `phi^- phi^+' - phi^+ phi^-' = w_s scale(x)`.
    pub fn ln_wronskian_const(&self, s: SpectralParam) -> f64 {
        match self.kind() {
            ModelKind::Sqb => -std::f64::consts::LN_2,
            ModelKind::Cir => {
                let u = self.upsilon_of(s);
                -self.mu * self.kappa.ln() + ln_gamma(self.mu + 1.0) - ln_gamma(u)
            }
            ModelKind::Ou => 0.5 * (2.0 * self.kappa * PI).ln() - ln_gamma(self.upsilon_of(s)),
        }
    }

    pub fn wronskian_const(&self, s: SpectralParam) -> f64 {
        self.ln_wronskian_const(s).exp()
    }

    /// `W[phi^{b1}_{s1}, phi^{b2}_{s2}](x) = f g' - g f'`.
    pub fn cross_wronskian(&self, s1: SpectralParam, b1: Branch, s2: SpectralParam, b2: Branch, x: f64) -> Result<CrossWronskian> {
        let y = self.coord("cross_wronskian", x)?;
        if s1 == s2 && b1 == b2 {
            return Ok(CrossWronskian {
                value: LogValue::ZERO,
                cancellation: 1.0,
                precision_lost: false,
                asymptotic: false,
            });
        }
        let p1 = self.phi_n(s1, b1, y, 0)? * self.phi_n(s2, b2, y, 1)?;
        let p2 = self.phi_n(s2, b2, y, 0)? * self.phi_n(s1, b1, y, 1)?;
        let (value, cancellation) = p1.add_tracked(&-p2);
        let precision_lost = cancellation > CANCELLATION_LIMIT;
        if precision_lost {
            if let Some(end) = self.near_endpoint(x) {
                let a = self.asymptotic_wronskian(s1, b1, s2, b2, end);
                return Ok(CrossWronskian {
                    value: a.leading.eval(x),
                    cancellation,
                    precision_lost,
                    asymptotic: true,
                });
            }
        }
        Ok(CrossWronskian {
            value,
            cancellation,
            precision_lost,
            asymptotic: false,
        })
    }

    /// The endpoint whose approach grid contains `x`, if any.
    pub fn near_endpoint(&self, x: f64) -> Option<Endpoint> {
        let y = x - self.shift;
        match self.kind() {
            ModelKind::Ou if y <= -8.0 => Some(Endpoint::Left),
            ModelKind::Ou if y >= 8.0 => Some(Endpoint::Right),
            ModelKind::Ou => None,
            _ if y <= 1e-4 => Some(Endpoint::Left),
            _ if y >= 1e3 => Some(Endpoint::Right),
            _ => None,
        }
    }

    /// `n` abscissas approaching `end`, ordered towards the endpoint:
    /// `x` from `1e-4` to `1e-8` and from `1e3` to `1e5` for SQB/CIR,
    /// `|x - shift|` from 8 to 30 for OU.
    pub fn approach_grid(&self, end: Endpoint, n: usize) -> Vec<f64> {
        let n = n.max(2);
        let geo = |a: f64, b: f64| -> Vec<f64> {
            let (la, lb) = (a.ln(), b.ln());
            (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
        };
        match (self.kind(), end) {
            (ModelKind::Ou, Endpoint::Left) => geo(8.0, 30.0).into_iter().map(|u| self.shift - u).collect(),
            (ModelKind::Ou, Endpoint::Right) => geo(8.0, 30.0).into_iter().map(|u| self.shift + u).collect(),
            (_, Endpoint::Left) => geo(1e-4, 1e-8),
            (_, Endpoint::Right) => geo(1e3, 1e5),
        }
    }

    /// Leading asymptotic term and limit of `W[phi^{b1}_{s1}, phi^{b2}_{s2}]` at `end`.
    pub fn asymptotic_wronskian(&self, s1: SpectralParam, b1: Branch, s2: SpectralParam, b2: Branch, end: Endpoint) -> AsymptoticWronskian {
        match (b1, b2) {
            (Branch::Minus, Branch::Plus) => {
                let a = self.asymptotic_wronskian(s2, Branch::Plus, s1, Branch::Minus, end);
                AsymptoticWronskian {
                    leading: a.leading.negated(),
                    limit: WronskianLimit {
                        sign: -a.limit.sign,
                        magnitude: a.limit.magnitude,
                    },
                }
            }
            _ => AsymptoticWronskian {
                leading: self.leading_term(s1.value(), b1, s2.value(), b2, end),
                limit: self.wronskian_limit(s1.value(), b1, s2.value(), b2, end),
            },
        }
    }

    fn wronskian_limit(&self, r1: f64, b1: Branch, r2: f64, b2: Branch, end: Endpoint) -> WronskianLimit {
        use LimitMagnitude::*;
        let lim = |sign: i8, magnitude| WronskianLimit {
            sign,
            magnitude: if sign == 0 { Zero } else { magnitude },
        };
        match (b1, b2, end) {
            (Branch::Plus, Branch::Plus, Endpoint::Left) => {
                lim(sign_of(r2 - r1), if self.kind() == ModelKind::Ou { Zero } else { Finite })
            }
            (Branch::Plus, Branch::Plus, Endpoint::Right) => lim(sign_of(r2 - r1), Infinite),
            (Branch::Minus, Branch::Minus, Endpoint::Left) => lim(sign_of(r1 - r2), Infinite),
            (Branch::Minus, Branch::Minus, Endpoint::Right) => lim(sign_of(r1 - r2), Zero),
            (Branch::Plus, Branch::Minus, Endpoint::Left) => lim(-1, Infinite),
            (Branch::Plus, Branch::Minus, Endpoint::Right) => {
                // For SQB with equal parameters the Wronskian is -w_s x^{-mu-1} -> -0.
                if self.kind() == ModelKind::Sqb && r1 <= r2 {
                    lim(-1, Zero)
                } else {
                    lim(-1, Infinite)
                }
            }
            (Branch::Minus, Branch::Plus, _) => unreachable!("handled by swapping"),
        }
    }

    fn leading_term(&self, s1: f64, b1: Branch, s2: f64, b2: Branch, end: Endpoint) -> LeadingTerm {
        use Branch::*;
        let lv = LogValue::from_f64;
        let g = |x: f64| gamma(x).unwrap_or(LogValue::ZERO);
        let mu = self.mu;
        let shift = self.shift;
        match self.kind() {
            ModelKind::Sqb => {
                let nu2 = self.nu0() * self.nu0();
                let q = 2.0 * (s1 * s2).sqrt() / nu2;
                let r4 = (s1 * s2).powf(0.25);
                let rate = 2.0 * std::f64::consts::SQRT_2 / self.nu0();
                let (a1, a2) = (s1.sqrt(), s2.sqrt());
                match (b1, b2, end) {
                    (Plus, Plus, Endpoint::Left) => {
                        let c = lv(q).powf(mu) * lv(2.0 * (s2 - s1) / nu2) / (g(mu + 1.0) * g(mu + 2.0));
                        LeadingTerm::new(c, 0.0, shift)
                    }
                    (Plus, Minus, Endpoint::Left) => LeadingTerm::new(lv(-0.5) * lv(s1 / s2).powf(0.5 * mu), -mu - 1.0, shift),
                    (Minus, Minus, Endpoint::Left) => {
                        if mu > 1.0 {
                            let c = g(mu) * g(mu - 1.0) * lv((s1 - s2) / (2.0 * nu2)) * lv(q).powf(-mu);
                            LeadingTerm::new(c, -2.0 * mu, shift)
                        } else if mu == 1.0 {
                            let mut t = LeadingTerm::new(lv((s1 - s2) / (4.0 * (s1 * s2).sqrt())), -2.0, shift);
                            t.log_factor = true;
                            t
                        } else {
                            let c = g(mu) * g(1.0 - mu) * lv((s1.powf(mu) - s2.powf(mu)) / (4.0 * (s1 * s2).powf(0.5 * mu)));
                            LeadingTerm::new(c, -mu - 1.0, shift)
                        }
                    }
                    (Plus, Plus, Endpoint::Right) => {
                        let mut t = LeadingTerm::new(lv((a2 - a1) / (4.0 * PI * r4)), -mu - 1.0, shift);
                        t.sqrt_rate = rate * (a1 + a2);
                        t
                    }
                    (Plus, Minus, Endpoint::Right) => {
                        let mut t = LeadingTerm::new(lv(-0.25 * (a1 + a2) / r4), -mu - 1.0, shift);
                        t.sqrt_rate = rate * (a1 - a2);
                        t
                    }
                    (Minus, Minus, Endpoint::Right) => {
                        let mut t = LeadingTerm::new(lv(0.25 * PI * (a1 - a2) / r4), -mu - 1.0, shift);
                        t.sqrt_rate = -rate * (a1 + a2);
                        t
                    }
                    (Minus, Plus, _) => unreachable!("handled by swapping"),
                }
            }
            ModelKind::Cir => {
                let k = self.kappa;
                let (u1, u2) = (s1 / self.lambda1(), s2 / self.lambda1());
                let g12 = g(u1) * g(u2);
                match (b1, b2, end) {
                    (Plus, Plus, Endpoint::Left) => LeadingTerm::new(lv(k * (u2 - u1) / (mu + 1.0)), 0.0, shift),
                    (Plus, Minus, Endpoint::Left) => {
                        LeadingTerm::new(-(g(mu + 1.0) / g(u2)) * lv(k).powf(-mu), -mu - 1.0, shift)
                    }
                    (Minus, Minus, Endpoint::Left) => {
                        if mu > 1.0 {
                            let c = g(mu) * g(mu - 1.0) / g12 * lv(k).powf(1.0 - 2.0 * mu) * lv(u1 - u2);
                            LeadingTerm::new(c, -2.0 * mu, shift)
                        } else if mu == 1.0 {
                            let mut t = LeadingTerm::new(lv((u1 - u2) / k) / g12, -2.0, shift);
                            t.log_factor = true;
                            t
                        } else {
                            let r = |u: f64| g(u) * rgamma(u - mu);
                            let c = lv(k).powf(-mu) * g(mu) * g(1.0 - mu) / g12 * (r(u1) - r(u2));
                            LeadingTerm::new(c, -mu - 1.0, shift)
                        }
                    }
                    (Plus, Plus, Endpoint::Right) => {
                        let p = u1 + u2 - 2.0 * mu - 3.0;
                        let c = lv(k * (u2 - u1)) * g(mu + 1.0) * g(mu + 1.0) / g12 * lv(k).powf(p);
                        let mut t = LeadingTerm::new(c, p, shift);
                        t.linear_rate = 2.0 * k;
                        t
                    }
                    (Plus, Minus, Endpoint::Right) => {
                        let p = u1 - u2 - mu - 1.0;
                        let c = -(lv(k) * g(mu + 1.0) / g(u1)) * lv(k).powf(p);
                        let mut t = LeadingTerm::new(c, p, shift);
                        t.linear_rate = k;
                        t
                    }
                    (Minus, Minus, Endpoint::Right) => {
                        let p = -u1 - u2 - 1.0;
                        LeadingTerm::new(lv(k * (u1 - u2)) * lv(k).powf(p), p, shift)
                    }
                    (Minus, Plus, _) => unreachable!("handled by swapping"),
                }
            }
            ModelKind::Ou => {
                let k = self.kappa;
                let sk = k.sqrt();
                let (u1, u2) = (s1 / self.lambda1(), s2 / self.lambda1());
                let g12 = g(u1) * g(u2);
                let with = |c: LogValue, p: f64, quad: f64| {
                    let mut t = LeadingTerm::new(c * lv(sk).powf(p), p, shift);
                    t.quad_rate = quad;
                    t
                };
                let root = lv((2.0 * PI * k).sqrt());
                match (b1, b2, end) {
                    (Plus, Plus, Endpoint::Left) => with(lv((u2 - u1) * sk), -u1 - u2 - 1.0, 0.0),
                    (Plus, Minus, Endpoint::Left) => with(-(root / g(u2)), u2 - u1, 0.5 * k),
                    (Minus, Minus, Endpoint::Left) => with(lv((u1 - u2) * 2.0 * PI * sk) / g12, u1 + u2 - 3.0, k),
                    (Plus, Plus, Endpoint::Right) => with(lv((u2 - u1) * 2.0 * PI * sk) / g12, u1 + u2 - 3.0, k),
                    (Plus, Minus, Endpoint::Right) => with(-(root / g(u1)), u1 - u2, 0.5 * k),
                    (Minus, Minus, Endpoint::Right) => with(lv((u1 - u2) * sk), -u1 - u2 - 1.0, 0.0),
                    (Minus, Plus, _) => unreachable!("handled by swapping"),
                }
            }
        }
    }

    /// Transition density `p_X(t; x0, x)`.
    pub fn transition_pdf(&self, t: f64, x0: f64, x: f64) -> Result<LogValue> {
        if !(t.is_finite() && t > 0.0) {
            return Err(domain("transition_pdf_x", format!("need t > 0, got {t}")));
        }
        let y0 = self.coord("transition_pdf_x", x0)?;
        let y = self.coord("transition_pdf_x", x)?;
        let nu2 = self.nu0() * self.nu0();
        let short_time = || {
            // Local Gaussian limit, only reached when t underflows the scale constants.
            let v = nu2 * y0 * t;
            let d = y - y0;
            Ok(LogValue::from_ln(-0.5 * (2.0 * PI * v).ln() - 0.5 * d * d / v))
        };
        match self.kind() {
            ModelKind::Sqb => {
                let h = 0.5 * nu2 * t;
                if !(1.0 / h).is_finite() {
                    return short_time();
                }
                let z = 2.0 * (y * y0).sqrt() / h;
                let d = y.sqrt() - y0.sqrt();
                let ln = 0.5 * self.mu * (y / y0).ln() - d * d / h - h.ln();
                Ok(bessel_i_scaled(self.mu, z)?.scale_exp(ln))
            }
            ModelKind::Cir => {
                let e = self.lambda1() * t;
                // ln c_t with c_t = kappa / (e^{lambda1 t} - 1), stable for large t.
                let ln_em1 = if e > 1.0 { e + (-(-e).exp()).ln_1p() } else { e.exp_m1().ln() };
                let ln_ct = self.kappa.ln() - ln_em1;
                if !ln_ct.exp().is_finite() {
                    return short_time();
                }
                let ln_ye = y.ln() + e;
                let z = 2.0 * (ln_ct + 0.5 * (y0.ln() + ln_ye)).exp();
                let d = (0.5 * (ln_ct + ln_ye)).exp() - (0.5 * (ln_ct + y0.ln())).exp();
                let ln = ln_ct + e + 0.5 * self.mu * (ln_ye - y0.ln()) - d * d;
                Ok(bessel_i_scaled(self.mu, z)?.scale_exp(ln))
            }
            ModelKind::Ou => {
                let l1 = self.lambda1();
                let v = -(-2.0 * l1 * t).exp_m1() / self.kappa;
                let m = y0 * (-l1 * t).exp();
                let d = y - m;
                Ok(LogValue::from_ln(-0.5 * (2.0 * PI * v).ln() - 0.5 * d * d / v))
            }
        }
    }

    /// Green's function `G(x, x0, s) = m(x) phi^+_s(min) phi^-_s(max) / w_s`.
    pub fn greens_function(&self, x: f64, x0: f64, s: SpectralParam) -> Result<LogValue> {
        let y = self.coord("greens_function", x)?;
        let y0 = self.coord("greens_function", x0)?;
        let (lo, hi) = if y <= y0 { (y, y0) } else { (y0, y) };
        let v = self.phi_n(s, Branch::Plus, lo, 0)? * self.phi_n(s, Branch::Minus, hi, 0)?;
        Ok(v.scale_exp(self.ln_speed(y) - self.ln_wronskian_const(s)))
    }
}

fn ln_gamma(x: f64) -> f64 {
    gamma_ln(x).unwrap_or(f64::NAN)
}

/// `S(x; a) = x^{-a} Gamma(x + a) / Gamma(x)` for `0 < a < 1`, `x > 0`.
pub fn gamma_ratio_s(x: f64, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) || !(x > 0.0) || !x.is_finite() {
        return Err(domain("gamma_ratio_s", format!("need 0 < a < 1 and x > 0, got x = {x}, a = {a}")));
    }
    Ok((gamma_ln(x + a)? - gamma_ln(x)? - a * x.ln()).exp())
}

/// `R(x; a) = Gamma(x) / Gamma(x - a)` for `0 < a < 1`, `x > a`.
pub fn gamma_ratio_r(x: f64, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) || !(x > a) || !x.is_finite() {
        return Err(domain("gamma_ratio_r", format!("need 0 < a < 1 and x > a, got x = {x}, a = {a}")));
    }
    Ok((gamma_ln(x)? - gamma_ln(x - a)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rel_err;

    fn sp(s: f64) -> SpectralParam {
        SpectralParam::new(s).unwrap()
    }

    #[test]
    fn coefficients() {
        let m = UnderlyingModel::sqb(1.0, 1.0).unwrap();
        assert_eq!(m.drift(4.0).unwrap(), 1.0);
        assert_eq!(m.diffusion(4.0).unwrap(), 2.0);
        let m = UnderlyingModel::cir(1.0, 1.0, 0.5).unwrap();
        assert_eq!(m.drift(2.0).unwrap(), 0.0);
        assert!(rel_err(m.diffusion(2.0).unwrap(), 2f64.sqrt()) < 1e-15);
        let m = UnderlyingModel::ou(1.0, 0.0, 1.0).unwrap();
        assert_eq!(m.drift(-3.0).unwrap(), 3.0);
        assert_eq!(m.diffusion(-3.0).unwrap(), 1.0);
        assert!(m.drift(f64::INFINITY).is_err());
    }

    #[test]
    fn validation() {
        assert!(UnderlyingModel::sqb(1.0, 0.4).is_err());
        assert!(UnderlyingModel::cir(1.0, 1.0, 0.0).is_err());
        assert!(UnderlyingModel::ou(0.0, 0.0, 1.0).is_err());
        let json = r#"{"kind":"SQB","nu0":1.0,"lambda0":1.0,"extra":1}"#;
        assert!(serde_json::from_str::<ModelParams>(json).is_err());
        let json = r#"{"kind":"CIR","nu0":1.0,"lambda0":1.0,"lambda1":0.5}"#;
        let m: UnderlyingModel = serde_json::from_str(json).unwrap();
        assert_eq!(m.kappa(), Some(1.0));
        let json = r#"{"kind":"SQB","nu0":1.0,"lambda0":0.2}"#;
        assert!(serde_json::from_str::<UnderlyingModel>(json).is_err());
    }

    #[test]
    fn densities_closed_forms() {
        let m = UnderlyingModel::sqb(1.0, 2.0).unwrap(); // mu = 3
        let m1 = UnderlyingModel::sqb(2f64.sqrt(), 2.0).unwrap(); // mu = 1
        assert!(rel_err(m1.scale_density(2.0).unwrap().to_f64(), 0.25) < 1e-15);
        assert!(rel_err(m1.speed_density(2.0).unwrap().to_f64(), 2.0) < 1e-15);
        assert!(rel_err(m.speed_density(2.0).unwrap().to_f64(), 2.0 * 8.0) < 1e-14);
        let ou = UnderlyingModel::ou(1.0, 0.0, 1.0).unwrap(); // kappa = 2
        assert_eq!(ou.scale_density(0.0).unwrap().to_f64(), 1.0);
        assert_eq!(ou.speed_density(0.0).unwrap().to_f64(), 2.0);
    }

    #[test]
    fn wronskian_constants() {
        let s = sp(0.7);
        assert_eq!(UnderlyingModel::sqb(1.0, 1.0).unwrap().wronskian_const(s), 0.5);
        // kappa = 1, mu = 1, s = lambda1.
        let cir = UnderlyingModel::cir(2f64.sqrt(), 2.0, 1.0).unwrap();
        assert!(rel_err(cir.wronskian_const(sp(1.0)), 1.0) < 1e-14);
    }

    #[test]
    fn ou_shift_is_a_translation() {
        let a = UnderlyingModel::ou(0.8, 0.0, 1.3).unwrap();
        let b = UnderlyingModel::ou(0.8, 2.6, 1.3).unwrap();
        let s = sp(0.9);
        for &x in &[-1.0, 0.3, 2.0] {
            let pa = a.phi(s, Branch::Plus, x).unwrap();
            let pb = b.phi(s, Branch::Plus, x + 2.0).unwrap();
            assert!(pa.rel_diff(&pb) < 1e-13);
            assert!(rel_err(b.drift(x + 2.0).unwrap(), a.drift(x).unwrap()) < 1e-13);
        }
    }

    #[test]
    fn gamma_ratios() {
        assert!(rel_err(gamma_ratio_s(1.0, 0.5).unwrap(), PI.sqrt() / 2.0) < 1e-14);
        assert!(rel_err(gamma_ratio_r(2.0, 0.5).unwrap(), 2.0 / PI.sqrt()) < 1e-14);
        assert!(gamma_ratio_s(1.0, 1.0).is_err());
        assert!(gamma_ratio_r(0.3, 0.5).is_err());
    }
}
