//! Canonical transformation `F = F(X^(rho))` of an underlying diffusion into an
//! F-diffusion with affine drift `a + b F`.
//!
//! The map is `F(x) = -a/b + v(x)/u(x)` with generating function
//! `u = q1 phi^+_rho + q2 phi^-_rho` and numerator
//! `v = c1 phi^+_{rho+b} + c2 phi^-_{rho+b}`. For `a = b = 0` the offset is
//! dropped and `v` is built at `rho`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classify::ClassificationReport;
use crate::error::{domain, Error, Result};
use crate::logvalue::LogValue;
use crate::numerics::root::{find_root, RootSpec};
use crate::numerics::{integrate, QuadratureSpec, Transform};
use crate::specfun::{bessel_i, bessel_k, kummer_m, kummer_u, pcf_d};
use crate::underlying::{Branch, CrossWronskian, Endpoint, ModelKind, SpectralParam, UnderlyingModel, CANCELLATION_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "F1+")]
    F1Plus,
    #[serde(rename = "F1-")]
    F1Minus,
    #[serde(rename = "F2+")]
    F2Plus,
    #[serde(rename = "F2-")]
    F2Minus,
    #[serde(rename = "F3+")]
    F3Plus,
    #[serde(rename = "F3-")]
    F3Minus,
    #[serde(rename = "F4+")]
    F4Plus,
    #[serde(rename = "F4-")]
    F4Minus,
    #[serde(rename = "F5")]
    F5,
    #[serde(rename = "GENERAL")]
    General,
    #[serde(rename = "DRIFTLESS")]
    Driftless,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::F1Plus,
        Family::F1Minus,
        Family::F2Plus,
        Family::F2Minus,
        Family::F3Plus,
        Family::F3Minus,
        Family::F4Plus,
        Family::F4Minus,
        Family::F5,
        Family::General,
        Family::Driftless,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::F1Plus => "F1+",
            Family::F1Minus => "F1-",
            Family::F2Plus => "F2+",
            Family::F2Minus => "F2-",
            Family::F3Plus => "F3+",
            Family::F3Minus => "F3-",
            Family::F4Plus => "F4+",
            Family::F4Minus => "F4-",
            Family::F5 => "F5",
            Family::General => "GENERAL",
            Family::Driftless => "DRIFTLESS",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_epsilon() -> i8 {
    1
}

/// Parameters of a map. For the named families `q1, q2, c1, c2` are the
/// nonnegative template weights and `epsilon` the overall sign; for F5 the
/// numerator is `c1 phi^+ - c2 phi^-`. GENERAL and DRIFTLESS take signed `c1, c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub family: Family,
    pub rho: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub q1: f64,
    #[serde(default)]
    pub q2: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: i8,
}

/// Signed weights of the general form `(q1 phi^+ + q2 phi^-)` and `(c1 phi^+ + c2 phi^-)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub q1: f64,
    pub q2: f64,
    pub c1: f64,
    pub c2: f64,
}

/// The dual subfamilies of F1 with `epsilon = +1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subfamily {
    /// `F = -a/b + c phi^+_{rho+b} / phi^-_rho`.
    I,
    /// `F = -a/b + c phi^-_{rho+b} / phi^+_rho`.
    II,
}

impl MapSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(family: Family, rho: f64, a: f64, b: f64, q: (f64, f64), c: (f64, f64), epsilon: i8) -> Result<Self> {
        let s = MapSpec {
            family,
            rho,
            a,
            b,
            q1: q.0,
            q2: q.1,
            c1: c.0,
            c2: c.1,
            epsilon,
        };
        s.validate()?;
        Ok(s)
    }

    /// Dual subfamily map with scale `c > 0`.
    pub fn dual(sub: Subfamily, rho: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        match sub {
            Subfamily::I => Self::new(Family::F1Plus, rho, a, b, (0.0, 1.0), (c, 0.0), 1),
            Subfamily::II => Self::new(Family::F1Minus, rho, a, b, (1.0, 0.0), (0.0, c), 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let vals = [self.rho, self.a, self.b, self.q1, self.q2, self.c1, self.c2];
        if vals.iter().any(|v| !v.is_finite()) {
            return bad(format!("non-finite map parameter in {self:?}"));
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.rho + self.b > 0.0) {
            return bad(format!("rho + b must be positive, got {}", self.rho + self.b));
        }
        if self.b == 0.0 && self.a != 0.0 {
            return bad("b = 0 requires a = 0 (constant-drift maps are not supported)".into());
        }
        if self.epsilon != 1 && self.epsilon != -1 {
            return bad(format!("epsilon must be +1 or -1, got {}", self.epsilon));
        }
        if self.q1 < 0.0 || self.q2 < 0.0 || (self.q1 == 0.0 && self.q2 == 0.0) {
            return bad("q1, q2 must be nonnegative and not both zero".into());
        }
        if self.c1 == 0.0 && self.c2 == 0.0 {
            return bad("c1, c2 must not both be zero".into());
        }
        let (q1, q2, c1, c2) = (self.q1, self.q2, self.c1, self.c2);
        let pos = |x: f64| x > 0.0;
        let pattern = match self.family {
            Family::F1Plus => q1 == 0.0 && c2 == 0.0 && pos(c1),
            Family::F1Minus => q2 == 0.0 && c1 == 0.0 && pos(c2),
            Family::F2Plus => q2 == 0.0 && c2 == 0.0 && pos(c1),
            Family::F2Minus => q1 == 0.0 && c1 == 0.0 && pos(c2),
            Family::F3Plus => q1 == 0.0 && pos(c1) && pos(c2),
            Family::F3Minus => q2 == 0.0 && pos(c1) && pos(c2),
            Family::F4Plus => pos(q1) && pos(q2) && pos(c1) && c2 == 0.0,
            Family::F4Minus => pos(q1) && pos(q2) && c1 == 0.0 && pos(c2),
            Family::F5 => pos(c1) && pos(c2),
            Family::General => true,
            Family::Driftless => self.a == 0.0 && self.b == 0.0 && q1 * c2 - q2 * c1 != 0.0,
        };
        if !pattern {
            return bad(format!("weights (q1={q1}, q2={q2}, c1={c1}, c2={c2}, a={}, b={}) do not match family {}", self.a, self.b, self.family));
        }
        Ok(())
    }

    /// Weights of the general form, with `epsilon` and the F5 sign absorbed.
    pub fn weights(&self) -> Weights {
        let e = self.epsilon as f64;
        let c2 = if self.family == Family::F5 { -self.c2 } else { self.c2 };
        Weights {
            q1: self.q1,
            q2: self.q2,
            c1: e * self.c1,
            c2: e * c2,
        }
    }

    /// The constant `-a/b` (zero when `b = 0`).
    pub fn offset(&self) -> f64 {
        if self.b == 0.0 {
            0.0
        } else {
            -self.a / self.b
        }
    }

    pub fn rho_param(&self) -> SpectralParam {
        SpectralParam::new(self.rho).expect("validated")
    }

    pub fn rho_b_param(&self) -> SpectralParam {
        SpectralParam::new(self.rho + self.b).expect("validated")
    }

    /// Multiplies the numerator weights by `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        MapSpec {
            c1: self.c1 * k,
            c2: self.c2 * k,
            ..*self
        }
    }
}

/// Outcome of the monotonicity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCertificate {
    pub ok: bool,
    /// Sign of `F'` when `ok`.
    pub sign: i8,
    pub rule: String,
    /// Sign of `W` at `(l+, r-)` from the leading asymptotic terms (0 when undetermined).
    pub endpoint_signs: (i8, i8),
    /// Sign changes found by the numerical scan of `W`.
    pub scan_sign_changes: usize,
}

/// Values of `phi^±_s` and their first derivatives at one point.
#[derive(Debug, Clone, Copy)]
struct Jet {
    plus: [LogValue; 2],
    minus: [LogValue; 2],
}

fn jet(model: &UnderlyingModel, s: SpectralParam, x: f64) -> Result<Jet> {
    Ok(Jet {
        plus: [model.phi(s, Branch::Plus, x)?, model.phi_deriv(s, Branch::Plus, x)?],
        minus: [model.phi(s, Branch::Minus, x)?, model.phi_deriv(s, Branch::Minus, x)?],
    })
}

fn pick(j: &Jet, br: Branch) -> &[LogValue; 2] {
    match br {
        Branch::Plus => &j.plus,
        Branch::Minus => &j.minus,
    }
}

const BRANCH_PAIRS: [(Branch, Branch); 4] = [
    (Branch::Plus, Branch::Plus),
    (Branch::Plus, Branch::Minus),
    (Branch::Minus, Branch::Plus),
    (Branch::Minus, Branch::Minus),
];

fn pair_weight(w: &Weights, b1: Branch, b2: Branch) -> f64 {
    let q = if b1 == Branch::Plus { w.q1 } else { w.q2 };
    let c = if b2 == Branch::Plus { w.c1 } else { w.c2 };
    q * c
}

/// `W(x) = W[u_rho, v_{rho+b}](x)` from the four cross Wronskians.
fn wronskian_from_parts(model: &UnderlyingModel, spec: &MapSpec, w: &Weights, x: f64) -> Result<CrossWronskian> {
    let (r, rb) = (spec.rho_param(), spec.rho_b_param());
    let ju = jet(model, r, x)?;
    let jv = if spec.b == 0.0 { ju } else { jet(model, rb, x)? };
    let mut terms = Vec::with_capacity(4);
    let mut worst: f64 = 1.0;
    let mut lost = false;
    for (b1, b2) in BRANCH_PAIRS {
        let k = pair_weight(w, b1, b2);
        if k == 0.0 || (spec.b == 0.0 && b1 == b2) {
            continue;
        }
        let (f, g) = (pick(&ju, b1), pick(&jv, b2));
        let (v, ratio) = (f[0] * g[1]).add_tracked(&-(g[0] * f[1]));
        let v = if ratio > CANCELLATION_LIMIT {
            lost = true;
            match model.near_endpoint(x) {
                Some(end) => model.asymptotic_wronskian(r, b1, rb, b2, end).leading.eval(x),
                None => v,
            }
        } else {
            v
        };
        worst = worst.max(ratio);
        terms.push(v.scale(k));
    }
    let sum = LogValue::sum(&terms);
    let largest = terms.iter().map(|t| t.ln_abs()).fold(f64::NEG_INFINITY, f64::max);
    let sum_ratio = if sum.is_zero() { f64::INFINITY } else { (largest - sum.ln_abs()).exp() };
    Ok(CrossWronskian {
        value: sum,
        cancellation: worst.max(sum_ratio),
        precision_lost: lost || sum_ratio > CANCELLATION_LIMIT,
        asymptotic: lost && model.near_endpoint(x).is_some(),
    })
}

/// Sign of `W` near `end` from the weighted leading asymptotic terms.
fn endpoint_wronskian_sign(model: &UnderlyingModel, spec: &MapSpec, w: &Weights, end: Endpoint) -> i8 {
    if spec.b == 0.0 {
        return sign_of(w.c1 * w.q2 - w.c2 * w.q1);
    }
    let x = *model.approach_grid(end, 2).last().expect("grid");
    let (r, rb) = (spec.rho_param(), spec.rho_b_param());
    let terms: Vec<LogValue> = BRANCH_PAIRS
        .iter()
        .filter_map(|&(b1, b2)| {
            let k = pair_weight(w, b1, b2);
            (k != 0.0).then(|| model.asymptotic_wronskian(r, b1, rb, b2, end).leading.eval(x).scale(k))
        })
        .collect();
    let sum = LogValue::sum(&terms);
    let largest = terms.iter().map(|t| t.ln_abs()).fold(f64::NEG_INFINITY, f64::max);
    if sum.is_zero() || largest - sum.ln_abs() > 20.0 {
        0
    } else {
        sum.sign()
    }
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

/// Interior points used for sign scans: log-spaced over `[1e-8, 1e5]` for
/// SQB/CIR and evenly spaced over `shift ± 30` for OU.
pub fn scan_grid(model: &UnderlyingModel, n: usize) -> Vec<f64> {
    let n = n.max(2);
    match model.kind() {
        ModelKind::Ou => (0..n).map(|i| model.shift() - 30.0 + 60.0 * i as f64 / (n - 1) as f64).collect(),
        _ => crate::numerics::geometric_grid(1e-8, 1e5, n),
    }
}

/// Interior reference point: the median of the normalized speed density for
/// CIR and OU, and `x = 1` for SQB (whose speed density is not integrable).
pub fn reference_point(model: &UnderlyingModel) -> f64 {
    match model.kind() {
        ModelKind::Ou => model.shift(),
        ModelKind::Sqb => 1.0,
        ModelKind::Cir => {
            // Speed density is a Gamma(mu + 1, kappa) density up to a constant.
            let (mu, k) = (model.mu().unwrap_or(1.0), model.kappa().unwrap_or(1.0));
            let ln_norm = crate::specfun::gamma_ln(mu + 1.0).unwrap_or(0.0) - (mu + 1.0) * k.ln();
            let dens = move |x: f64| if x > 0.0 { (mu * x.ln() - k * x - ln_norm).exp() } else { 0.0 };
            let q = QuadratureSpec::new(1e-14, 1e-12).with_transform(Transform::SquareRoot);
            let cdf = |x: f64| integrate(dens, 0.0, x, &q).map(|r| r.value).unwrap_or(f64::NAN) - 0.5;
            let mean = (mu + 1.0) / k;
            find_root(cdf, &RootSpec::new(1e-3 * mean, 10.0 * mean).with_tolerances(1e-12, 0.0)).unwrap_or(mean)
        }
    }
}

/// Result of a sign scan of `W` on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignScan {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
    pub sign_changes: usize,
}

/// Evaluates the sign of `W` on `n` grid points (see [`scan_grid`]).
pub fn scan_wronskian_sign(model: &UnderlyingModel, spec: &MapSpec, n: usize) -> Result<SignScan> {
    let w = spec.weights();
    let mut scan = SignScan {
        positive: 0,
        negative: 0,
        zero: 0,
        sign_changes: 0,
    };
    let mut last = 0i8;
    for x in scan_grid(model, n) {
        let s = wronskian_from_parts(model, spec, &w, x)?.value.sign();
        match s {
            1 => scan.positive += 1,
            -1 => scan.negative += 1,
            _ => scan.zero += 1,
        }
        if s != 0 {
            if last != 0 && s != last {
                scan.sign_changes += 1;
            }
            last = s;
        }
    }
    Ok(scan)
}

/// Decides strict monotonicity of the map from the closed-form rules, then
/// confirms with a 200-point sign scan of `W`.
pub fn certify_monotone(model: &UnderlyingModel, spec: &MapSpec) -> Result<MonotoneCertificate> {
    spec.validate()?;
    let w = spec.weights();
    let eps = spec.epsilon;
    let sb = sign_of(spec.b);
    let ends = (
        endpoint_wronskian_sign(model, spec, &w, Endpoint::Left),
        endpoint_wronskian_sign(model, spec, &w, Endpoint::Right),
    );
    let (mut ok, sign, mut rule): (bool, i8, String) = if spec.b == 0.0 {
        let d = sign_of(w.c1 * w.q2 - w.c2 * w.q1);
        (d != 0, d, "driftless: W = (c1 q2 - c2 q1) w_rho s(x)".into())
    } else {
        match spec.family {
            Family::F1Plus => (true, eps, "F1+: monotone for all parameters, sign +eps".into()),
            Family::F1Minus => (true, -eps, "F1-: monotone for all parameters, sign -eps".into()),
            Family::F2Plus => (true, eps * sb, "F2+: monotone for all parameters, sign +eps sign(b)".into()),
            Family::F2Minus => (true, -eps * sb, "F2-: monotone for all parameters, sign -eps sign(b)".into()),
            Family::F3Plus => (sb < 0, eps, "F3+: monotone iff b < 0, sign +eps".into()),
            Family::F3Minus => (sb < 0, -eps, "F3-: monotone iff b < 0, sign -eps".into()),
            Family::F4Plus => (sb > 0, eps, "F4+: monotone iff b > 0, sign +eps".into()),
            Family::F4Minus => (sb > 0, -eps, "F4-: monotone iff b > 0, sign -eps".into()),
            Family::F5 => (sb > 0, eps, "F5: monotone iff b > 0, sign eps".into()),
            Family::General | Family::Driftless => general_rule(&w, sb, ends),
        }
    };
    let mut changes = 0;
    if ok {
        let scan = scan_wronskian_sign(model, spec, 200)?;
        changes = scan.sign_changes;
        let wrong = if sign > 0 { scan.negative } else { scan.positive };
        if changes > 0 || wrong > 0 || scan.zero > 0 {
            ok = false;
            rule = format!("{rule}; rejected: sign scan found {changes} sign changes and {wrong} points of the wrong sign");
        }
    }
    Ok(MonotoneCertificate {
        ok,
        sign: if ok { sign } else { 0 },
        rule,
        endpoint_signs: ends,
        scan_sign_changes: changes,
    })
}

fn general_rule(w: &Weights, sb: i8, (sl, sr): (i8, i8)) -> (bool, i8, String) {
    let same = (w.c1 >= 0.0 && w.c2 >= 0.0) || (w.c1 <= 0.0 && w.c2 <= 0.0);
    if same {
        if sl != 0 && sl == sr {
            (true, sl, format!("numerator of one sign and W(l+), W(r-) both of sign {sl}"))
        } else {
            (false, 0, format!("numerator of one sign but W(l+) has sign {sl} and W(r-) sign {sr}"))
        }
    } else {
        let s1 = sign_of(w.c1);
        if sb > 0 {
            (true, s1, "numerator weights of opposite sign with b > 0".into())
        } else if sl == s1 && sr == s1 {
            (true, s1, format!("numerator weights of opposite sign, b < 0, W(l+) = W(r-) = sign(c1) = {s1}"))
        } else {
            (
                false,
                0,
                format!("numerator weights of opposite sign with b < 0 and endpoint signs ({sl}, {sr}) not both sign(c1) = {s1}; no rule applies"),
            )
        }
    }
}

/// A certified F-diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FDiffusion {
    model: UnderlyingModel,
    spec: MapSpec,
    weights: Weights,
    certificate: MonotoneCertificate,
    f_left: f64,
    f_right: f64,
    classification: ClassificationReport,
}

impl FDiffusion {
    /// Validates and certifies the map; fails with [`Error::NotMonotone`] when no rule applies.
    pub fn new(model: UnderlyingModel, spec: MapSpec) -> Result<Self> {
        let certificate = certify_monotone(&model, &spec)?;
        if !certificate.ok {
            return Err(Error::NotMonotone { rule: certificate.rule });
        }
        let weights = spec.weights();
        let f_left = spec.offset() + ratio_limit(&model, &spec, &weights, Endpoint::Left);
        let f_right = spec.offset() + ratio_limit(&model, &spec, &weights, Endpoint::Right);
        let classification = crate::classify::closed_form_report(&model, &spec, f_left);
        Ok(FDiffusion {
            model,
            spec,
            weights,
            certificate,
            f_left,
            f_right,
            classification,
        })
    }

    pub fn model(&self) -> &UnderlyingModel {
        &self.model
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn certificate(&self) -> &MonotoneCertificate {
        &self.certificate
    }

    /// Closed-form boundary classification and conservation verdict.
    pub fn classification(&self) -> &ClassificationReport {
        &self.classification
    }

    /// Sign of `F'`.
    pub fn map_sign(&self) -> i8 {
        self.certificate.sign
    }

    /// Limit of the map at an endpoint of the underlying state space.
    pub fn map_endpoint(&self, end: Endpoint) -> f64 {
        match end {
            Endpoint::Left => self.f_left,
            Endpoint::Right => self.f_right,
        }
    }

    /// `(F^(l), F^(r))`.
    pub fn state_space_f(&self) -> (f64, f64) {
        (self.f_left.min(self.f_right), self.f_left.max(self.f_right))
    }

    fn u_parts(&self, n: usize, x: f64) -> Result<LogValue> {
        let r = self.spec.rho_param();
        self.combine(self.weights.q1, self.weights.q2, r, n, x)
    }

    fn v_parts(&self, n: usize, x: f64) -> Result<LogValue> {
        let rb = self.spec.rho_b_param();
        self.combine(self.weights.c1, self.weights.c2, rb, n, x)
    }

    fn combine(&self, k1: f64, k2: f64, s: SpectralParam, n: usize, x: f64) -> Result<LogValue> {
        let eval = |br| match n {
            0 => self.model.phi(s, br, x),
            1 => self.model.phi_deriv(s, br, x),
            _ => self.model.phi_deriv2(s, br, x),
        };
        let mut out = LogValue::ZERO;
        if k1 != 0.0 {
            out = out + eval(Branch::Plus)?.scale(k1);
        }
        if k2 != 0.0 {
            out = out + eval(Branch::Minus)?.scale(k2);
        }
        Ok(out)
    }

    /// Generating function `u_rho(x) > 0`.
    pub fn u_hat(&self, x: f64) -> Result<LogValue> {
        self.u_parts(0, x)
    }

    /// `(u, u', u'')`.
    pub fn u_hat_jet(&self, x: f64) -> Result<[LogValue; 3]> {
        Ok([self.u_parts(0, x)?, self.u_parts(1, x)?, self.u_parts(2, x)?])
    }

    /// Numerator `v_{rho+b}(x)`.
    pub fn v_hat(&self, x: f64) -> Result<LogValue> {
        self.v_parts(0, x)
    }

    /// `(v, v', v'')`.
    pub fn v_hat_jet(&self, x: f64) -> Result<[LogValue; 3]> {
        Ok([self.v_parts(0, x)?, self.v_parts(1, x)?, self.v_parts(2, x)?])
    }

    /// `F(x) = -a/b + v(x)/u(x)`.
    pub fn map_f(&self, x: f64) -> Result<f64> {
        Ok(self.spec.offset() + (self.v_hat(x)? / self.u_hat(x)?).to_f64())
    }

    /// `W(x) = u v' - u' v` with cancellation diagnostics.
    pub fn wronskian_w(&self, x: f64) -> Result<CrossWronskian> {
        wronskian_from_parts(&self.model, &self.spec, &self.weights, x)
    }

    /// `F'(x) = W(x) / u(x)^2`.
    pub fn map_deriv(&self, x: f64) -> Result<LogValue> {
        let u = self.u_hat(x)?;
        Ok(self.wronskian_w(x)?.value / (u * u))
    }

    /// `sigma(F(x)) = nu(x) |W(x)| / u(x)^2`.
    pub fn sigma_at_x(&self, x: f64) -> Result<f64> {
        Ok(self.map_deriv(x)?.abs().to_f64() * self.model.diffusion(x)?)
    }

    /// Diffusion coefficient `sigma(F)`.
    pub fn sigma_f(&self, f: f64) -> Result<f64> {
        self.sigma_at_x(self.inverse_map(f)?)
    }

    fn to_search(&self, x: f64) -> f64 {
        match self.model.kind() {
            ModelKind::Ou => x,
            _ => x.ln(),
        }
    }

    fn from_search(&self, t: f64) -> f64 {
        match self.model.kind() {
            ModelKind::Ou => t,
            _ => t.exp(),
        }
    }

    /// Inverse map `X(F)` by bracket expansion and Brent's method.
    pub fn inverse_map(&self, f: f64) -> Result<f64> {
        let (lo_f, hi_f) = self.state_space_f();
        if !(f > lo_f && f < hi_f) {
            return Err(Error::OutOfRange {
                value: f,
                lo: lo_f,
                hi: hi_f,
            });
        }
        let sign = self.map_sign() as f64;
        let g = |t: f64| -> f64 {
            match self.map_f(self.from_search(t)) {
                Ok(v) => sign * (v - f),
                Err(_) => f64::NAN,
            }
        };
        let (t_min, t_max) = match self.model.kind() {
            ModelKind::Ou => {
                let w = 1e150 / self.model.kappa().unwrap_or(1.0).sqrt();
                (self.model.shift() - w, self.model.shift() + w)
            }
            _ => (-690.0, 690.0),
        };
        let seed = self.to_search(self.seed_point());
        let (mut lo, mut hi) = (seed - 1.0, seed + 1.0);
        let mut width = 1.0;
        let mut glo = g(lo);
        while glo > 0.0 || glo.is_nan() {
            if lo <= t_min {
                return Err(domain("inverse_map", format!("no bracket below for F = {f}")));
            }
            hi = lo;
            width *= 2.0;
            lo = (lo - width).max(t_min);
            glo = g(lo);
        }
        let mut ghi = g(hi);
        while ghi < 0.0 || ghi.is_nan() {
            if hi >= t_max {
                return Err(domain("inverse_map", format!("no bracket above for F = {f}")));
            }
            lo = hi;
            width *= 2.0;
            hi = (hi + width).min(t_max);
            ghi = g(hi);
        }
        let spec = RootSpec::new(lo, hi).with_tolerances(1e-15, 1e-13 * f.abs());
        Ok(self.from_search(find_root(g, &spec)?))
    }

    fn seed_point(&self) -> f64 {
        reference_point(&self.model)
    }

    /// `(m_rho, s_rho) = (u^2 m, s / u^2)`.
    pub fn densities_rho(&self, x: f64) -> Result<(LogValue, LogValue)> {
        let u = self.u_hat(x)?;
        let u2 = u * u;
        Ok((self.model.speed_density(x)? * u2, self.model.scale_density(x)? / u2))
    }

    /// `p^(rho)(t; x0, x) = e^{-rho t} u(x)/u(x0) p_X(t; x0, x)`.
    pub fn transition_pdf_x_rho(&self, t: f64, x0: f64, x: f64) -> Result<LogValue> {
        let p = self.model.transition_pdf(t, x0, x)?;
        Ok((p * self.u_hat(x)? / self.u_hat(x0)?).scale_exp(-self.spec.rho * t))
    }

    /// F-diffusion transition density `p_F(t; F0, F)`.
    pub fn transition_pdf_f(&self, t: f64, f0: f64, f: f64) -> Result<LogValue> {
        let x0 = self.inverse_map(f0)?;
        let x = self.inverse_map(f)?;
        Ok(self.transition_pdf_x_rho(t, x0, x)? / self.map_deriv(x)?.abs())
    }

    /// Same as [`transition_pdf_f`](Self::transition_pdf_f) with the underlying points given.
    pub fn transition_pdf_f_at_x(&self, t: f64, x0: f64, x: f64) -> Result<LogValue> {
        Ok(self.transition_pdf_x_rho(t, x0, x)? / self.map_deriv(x)?.abs())
    }

    /// `(m_F, s_F)` at `F`.
    pub fn densities_f(&self, f: f64) -> Result<(LogValue, LogValue)> {
        let x = self.inverse_map(f)?;
        let (m, s) = self.densities_rho(x)?;
        let jac = self.map_deriv(x)?.abs();
        Ok((m / jac, s / jac))
    }
}

/// Limit of `v/u` at an endpoint. At each endpoint one of `phi^±` dominates
/// (`phi^-` at `l`, `phi^+` at `r`); the limit follows from the dominant parts
/// of `u` and `v` and the ratio asymptotics of the fundamental solutions.
fn ratio_limit(model: &UnderlyingModel, spec: &MapSpec, w: &Weights, end: Endpoint) -> f64 {
    let (dom, rec) = match end {
        Endpoint::Left => (Branch::Minus, Branch::Plus),
        Endpoint::Right => (Branch::Plus, Branch::Minus),
    };
    let q = |br| if br == Branch::Plus { w.q1 } else { w.q2 };
    let c = |br| if br == Branch::Plus { w.c1 } else { w.c2 };
    let (ubr, qu) = if q(dom) > 0.0 { (dom, q(dom)) } else { (rec, q(rec)) };
    let (vbr, cv) = if c(dom) != 0.0 { (dom, c(dom)) } else { (rec, c(rec)) };
    let k = cv / qu;
    let r = same_or_cross_ratio(model, spec, vbr, ubr, dom, end);
    if r.is_infinite() {
        k.signum() * f64::INFINITY
    } else {
        k * r
    }
}

/// Limit of `phi^{vbr}_{rho+b} / phi^{ubr}_rho` at `end`.
fn same_or_cross_ratio(model: &UnderlyingModel, spec: &MapSpec, vbr: Branch, ubr: Branch, dom: Branch, end: Endpoint) -> f64 {
    if vbr != ubr {
        return if vbr == dom { f64::INFINITY } else { 0.0 };
    }
    if spec.b == 0.0 {
        return 1.0;
    }
    let finite_type = model.kind() != ModelKind::Ou && end == Endpoint::Left;
    if finite_type {
        let (rho, rb) = (spec.rho, spec.rho + spec.b);
        return match (model.kind(), vbr) {
            (ModelKind::Sqb, Branch::Plus) => (rb / rho).powf(0.5 * model.mu().unwrap_or(0.0)),
            (ModelKind::Sqb, Branch::Minus) => (rho / rb).powf(0.5 * model.mu().unwrap_or(0.0)),
            (ModelKind::Cir, Branch::Plus) => 1.0,
            _ => {
                let l1 = model.lambda1();
                let g = |u: f64| crate::specfun::gamma_ln(u).unwrap_or(f64::NAN);
                (g(rho / l1) - g(rb / l1)).exp()
            }
        };
    }
    let grows = (vbr == dom) == (spec.b > 0.0);
    if grows {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Closed-form `sigma` of the dual subfamilies at underlying point `x`.
pub fn sigma_dual_closed_form(model: &UnderlyingModel, sub: Subfamily, rho: f64, b: f64, c: f64, x: f64) -> Result<f64> {
    if !model.contains(x) {
        return Err(domain("sigma_dual_closed_form", format!("x = {x} outside the state space")));
    }
    let rb = rho + b;
    let nu0 = model.nu0();
    match model.kind() {
        ModelKind::Sqb => {
            let mu = model.mu().unwrap_or(0.0);
            let z = |s: f64| 2.0 / nu0 * (2.0 * s * x).sqrt();
            let (zr, zb) = (z(rho), z(rb));
            let v = match sub {
                Subfamily::I => {
                    let k = bessel_k(mu, zr)?;
                    let t1 = bessel_i(mu, zb)? * bessel_k(mu + 1.0, zr)? / (k * k);
                    let t2 = bessel_i(mu + 1.0, zb)? / k;
                    t1.scale(rho.sqrt()) + t2.scale(rb.sqrt())
                }
                Subfamily::II => {
                    let i = bessel_i(mu, zr)?;
                    let t1 = bessel_k(mu, zb)? * bessel_i(mu + 1.0, zr)? / (i * i);
                    let t2 = bessel_k(mu + 1.0, zb)? / i;
                    t1.scale(rho.sqrt()) + t2.scale(rb.sqrt())
                }
            };
            Ok(c * 2f64.sqrt() * v.to_f64())
        }
        ModelKind::Cir => {
            let mu = model.mu().unwrap_or(0.0);
            let k = model.kappa().unwrap_or(0.0);
            let l1 = model.lambda1();
            let (u, ub) = (rho / l1, rb / l1);
            let z = k * x;
            let v = match sub {
                Subfamily::I => {
                    let uu = kummer_u(u, mu + 1.0, z)?;
                    let t1 = kummer_m(ub, mu + 1.0, z)? * kummer_u(u + 1.0, mu + 2.0, z)? / (uu * uu);
                    let t2 = kummer_m(ub + 1.0, mu + 2.0, z)? / uu;
                    t1.scale(u) + t2.scale(ub / (mu + 1.0))
                }
                Subfamily::II => {
                    let mm = kummer_m(u, mu + 1.0, z)?;
                    let t1 = kummer_u(ub, mu + 1.0, z)? * kummer_m(u + 1.0, mu + 2.0, z)? / (mm * mm);
                    let t2 = kummer_u(ub + 1.0, mu + 2.0, z)? / mm;
                    t1.scale(u / (mu + 1.0)) + t2.scale(ub)
                }
            };
            Ok(c * k * nu0 * x.sqrt() * v.to_f64())
        }
        ModelKind::Ou => {
            let l1 = model.lambda1();
            let k = model.kappa().unwrap_or(0.0);
            let (u, ub) = (rho / l1, rb / l1);
            let z = k.sqrt() * (x - model.shift());
            // Subfamily (ii) is (i) reflected: z -> -z.
            let z = if sub == Subfamily::I { z } else { -z };
            let d = pcf_d(-u, z)?;
            let t1 = pcf_d(-ub - 1.0, -z)? / d;
            let t2 = pcf_d(-ub, -z)? * pcf_d(-u - 1.0, z)? / (d * d);
            Ok(c * (2.0 / l1).sqrt() * (t1.scale(rb) + t2.scale(rho)).to_f64())
        }
    }
}

/// Result of calibrating the scale of a map to a local-volatility level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spec: MapSpec,
    /// Underlying point mapped to the target level.
    pub x: f64,
    /// `|sigma(F*)/F* - target|` recomputed from the calibrated diffusion.
    pub residual: f64,
}

/// Rescales the numerator of `template` (which must have `a = 0`) so that
/// `sigma(F*)/F* = local_vol`. For `a = 0` the ratio `sigma/F` at a given
/// underlying point does not depend on the scale, so the point is found first
/// and the scale follows from `F* = k F(x)`. The first root on the scan grid is used.
pub fn calibrate_scale(model: &UnderlyingModel, template: &MapSpec, f_target: f64, local_vol: f64) -> Result<Calibration> {
    if template.a != 0.0 {
        return Err(Error::InvalidParameter("scale calibration needs a = 0".into()));
    }
    if !(f_target != 0.0 && f_target.is_finite() && local_vol > 0.0) {
        return Err(Error::InvalidParameter(format!("need F* != 0 and local vol > 0, got {f_target}, {local_vol}")));
    }
    let base = FDiffusion::new(*model, *template)?;
    let h = |x: f64| -> f64 {
        let run = || -> Result<f64> {
            let g = base.map_f(x)?;
            if g.signum() != f_target.signum() || g == 0.0 {
                return Ok(f64::NAN);
            }
            Ok((base.sigma_at_x(x)? / g.abs()).ln() - local_vol.ln())
        };
        run().unwrap_or(f64::NAN)
    };
    let grid = scan_grid(model, 400);
    let search = |x: f64| base.to_search(x);
    let mut bracket = None;
    let mut prev: Option<(f64, f64)> = None;
    for &x in &grid {
        let v = h(x);
        if v.is_finite() {
            if let Some((px, pv)) = prev {
                if pv * v <= 0.0 {
                    bracket = Some((search(px), search(x)));
                    break;
                }
            }
            prev = Some((x, v));
        } else {
            prev = None;
        }
    }
    let (lo, hi) = bracket.ok_or_else(|| Error::Refused(format!("local volatility {local_vol} is not attained by this map family")))?;
    let t = find_root(|t| h(base.from_search(t)), &RootSpec::new(lo, hi).with_tolerances(1e-15, 0.0))?;
    let x = base.from_search(t);
    let k = f_target / base.map_f(x)?;
    let spec = template.scaled(k);
    let fd = FDiffusion::new(*model, spec)?;
    let residual = (fd.sigma_f(f_target)? / f_target - local_vol).abs();
    Ok(Calibration { spec, x, residual })
}
