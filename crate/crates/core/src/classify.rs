//! Boundary classification of X^(rho)- and F-diffusions and checks of
//! expectation-rate conservation, by closed-form rules and numerically.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::logvalue::LogValue;
use crate::numerics::{integrate, sequence_trend, tends_to_zero, LimitTrend, QuadratureSpec};
use crate::transform::{reference_point, FDiffusion, MapSpec};
use crate::underlying::{Branch, Endpoint, ModelKind, SpectralParam, UnderlyingModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryType {
    Entrance,
    Exit,
    RegularKilling,
    AttractingNatural,
    NonAttractingNatural,
}

impl BoundaryType {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryType::Entrance => "entrance",
            BoundaryType::Exit => "exit",
            BoundaryType::RegularKilling => "regular-killing",
            BoundaryType::AttractingNatural => "attracting-natural",
            BoundaryType::NonAttractingNatural => "non-attracting-natural",
        }
    }
}

impl fmt::Display for BoundaryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub left: BoundaryType,
    pub right: BoundaryType,
    pub conserves_rate: bool,
    pub rule_fired: String,
    /// Whether the numerical oracles were run and agree with the closed-form rules.
    pub numeric_confirmed: bool,
}

/// Inner products `(f, g) = ∫ f g m dx` near an endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerProduct {
    /// `(phi^+, phi^-)` on `(l, x]`.
    PlusMinusLeft,
    /// `(phi^-, phi^-)` on `(l, x]`.
    MinusMinusLeft,
    /// `(phi^+, phi^-)` on `[x, r)`.
    PlusMinusRight,
    /// `(phi^+, phi^+)` on `[x, r)`.
    PlusPlusRight,
}

impl InnerProduct {
    pub const ALL: [InnerProduct; 4] = [
        InnerProduct::PlusMinusLeft,
        InnerProduct::MinusMinusLeft,
        InnerProduct::PlusMinusRight,
        InnerProduct::PlusPlusRight,
    ];

    fn parts(self) -> (Branch, Branch, Endpoint) {
        match self {
            InnerProduct::PlusMinusLeft => (Branch::Plus, Branch::Minus, Endpoint::Left),
            InnerProduct::MinusMinusLeft => (Branch::Minus, Branch::Minus, Endpoint::Left),
            InnerProduct::PlusMinusRight => (Branch::Plus, Branch::Minus, Endpoint::Right),
            InnerProduct::PlusPlusRight => (Branch::Plus, Branch::Plus, Endpoint::Right),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrability {
    Finite,
    Infinite,
    Inconclusive,
}

/// Outcome of a numerical limit test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Known integrability of the inner products at `rho` for each model:
/// for SQB/CIR only `(phi^-, phi^-)` near 0 depends on `mu` (finite iff `mu < 1`),
/// `(phi^+, phi^-)` near 0 is finite and both products near infinity are infinite;
/// for OU all four are infinite.
pub fn closed_form_integrability(model: &UnderlyingModel, which: InnerProduct) -> Integrability {
    match (model.kind(), which) {
        (ModelKind::Ou, _) => Integrability::Infinite,
        (_, InnerProduct::PlusMinusLeft) => Integrability::Finite,
        (_, InnerProduct::MinusMinusLeft) => {
            if model.mu().unwrap_or(1.0) < 1.0 {
                Integrability::Finite
            } else {
                Integrability::Infinite
            }
        }
        _ => Integrability::Infinite,
    }
}

/// Boundary types of the X^(rho)-diffusion from the weights `(q1, q2)` and the
/// integrability of the four inner products. `None` when an input is inconclusive.
pub fn boundary_rules(q1: f64, q2: f64, facts: impl Fn(InnerProduct) -> Integrability) -> Option<(BoundaryType, BoundaryType)> {
    use InnerProduct::*;
    let finite = |w| match facts(w) {
        Integrability::Finite => Some(true),
        Integrability::Infinite => Some(false),
        Integrability::Inconclusive => None,
    };
    let left = if q2 > 0.0 {
        if !finite(PlusMinusLeft)? {
            BoundaryType::AttractingNatural
        } else if !finite(MinusMinusLeft)? {
            BoundaryType::Exit
        } else {
            BoundaryType::RegularKilling
        }
    } else if !finite(PlusMinusLeft)? {
        BoundaryType::NonAttractingNatural
    } else {
        BoundaryType::Entrance
    };
    let right = if q1 > 0.0 {
        if !finite(PlusMinusRight)? {
            BoundaryType::AttractingNatural
        } else if !finite(PlusPlusRight)? {
            BoundaryType::Exit
        } else {
            BoundaryType::RegularKilling
        }
    } else if !finite(PlusMinusRight)? {
        BoundaryType::NonAttractingNatural
    } else {
        BoundaryType::Entrance
    };
    Some((left, right))
}

/// Boundary classification of X^(rho) (and hence of F, whose endpoints are
/// `F(l+)` and `F(r-)`) from the closed-form integrability facts.
pub fn classify_x_rho(fd: &FDiffusion) -> (BoundaryType, BoundaryType) {
    let w = fd.weights();
    closed_form_boundaries(fd.model(), w.q1, w.q2)
}

fn closed_form_boundaries(model: &UnderlyingModel, q1: f64, q2: f64) -> (BoundaryType, BoundaryType) {
    boundary_rules(q1, q2, |w| closed_form_integrability(model, w)).expect("closed-form facts are decided")
}

/// Points approaching `end`, from the interior outwards: decades for SQB/CIR,
/// half-decades of distance from the shift for OU.
fn probe_grid(model: &UnderlyingModel, end: Endpoint) -> Vec<f64> {
    match (model.kind(), end) {
        (ModelKind::Ou, Endpoint::Left) => (0..=12).map(|k| model.shift() - 10f64.powf(0.5 * k as f64)).collect(),
        (ModelKind::Ou, Endpoint::Right) => (0..=12).map(|k| model.shift() + 10f64.powf(0.5 * k as f64)).collect(),
        (_, Endpoint::Left) => (0..=16).map(|k| 10f64.powi(-k)).collect(),
        (_, Endpoint::Right) => (0..=12).map(|k| 10f64.powi(k)).collect(),
    }
}

/// Numerically estimates whether an inner product is finite by accumulating the
/// integral over nested endpoint neighbourhoods and classifying the trend of the
/// partial integrals over the last three decades.
pub fn integrability_probe(fd: &FDiffusion, which: InnerProduct) -> Integrability {
    probe_model(fd.model(), fd.spec().rho_param(), which)
}

fn probe_model(model: &UnderlyingModel, s: SpectralParam, which: InnerProduct) -> Integrability {
    let (b1, b2, end) = which.parts();
    let f = |x: f64| -> f64 {
        let v = || -> Result<LogValue> { Ok(model.phi(s, b1, x)? * model.phi(s, b2, x)? * model.speed_density(x)?) };
        v().map(|v| v.to_f64()).unwrap_or(f64::NAN)
    };
    let grid = probe_grid(model, end);
    let q = QuadratureSpec::new(1e-300, 1e-10);
    let mut partial = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
        match integrate(f, a, b, &q) {
            Ok(r) if r.value.is_finite() => acc += r.value,
            // The integrand overflows: the product grows exponentially.
            _ if f(w[1]).is_infinite() || f(0.5 * (a + b)).is_infinite() => acc = f64::INFINITY,
            _ => return Integrability::Inconclusive,
        }
        partial.push(acc);
        if acc.is_infinite() {
            break;
        }
    }
    let tail = match model.kind() {
        ModelKind::Ou => 7,
        _ => 4,
    };
    match sequence_trend(&partial, tail) {
        LimitTrend::Finite(_) | LimitTrend::TendsToZero => Integrability::Finite,
        LimitTrend::Diverges => Integrability::Infinite,
        LimitTrend::Inconclusive => Integrability::Inconclusive,
    }
}

/// Closed-form verdict on conservation of the expectation rate.
///
/// OU: always. SQB/CIR: if `q2 = 0`, iff `c2 = 0`; if `q2 > 0`, iff `F(0+) = 0`
/// (for `c2 = 0` this means `a = 0`, since then `F(0+) = -a/b`).
pub fn conserves_expectation_rate(fd: &FDiffusion) -> (bool, String) {
    closed_form_conservation(fd.model(), fd.spec(), fd.map_endpoint(Endpoint::Left))
}

fn closed_form_conservation(model: &UnderlyingModel, spec: &MapSpec, f_left: f64) -> (bool, String) {
    if model.kind() == ModelKind::Ou {
        return (true, "OU: conserves for every choice of parameters".into());
    }
    let w = spec.weights();
    if w.q2 == 0.0 {
        if w.c2 == 0.0 {
            (true, "q2 = 0 and c2 = 0".into())
        } else {
            (false, "q2 = 0 and c2 != 0".into())
        }
    } else {
        let zero = f_left.abs() <= 1e-12 * spec.offset().abs().max(1.0);
        let what = if w.c2 == 0.0 { "c2 = 0, q2 > 0" } else { "c2 != 0, q2 > 0" };
        if zero {
            (true, format!("{what} and F(0+) = 0"))
        } else {
            (false, format!("{what} and F(0+) = {f_left} != 0"))
        }
    }
}

/// The boundary expression whose vanishing at both endpoints is equivalent to
/// conservation of the expectation rate, evaluated at `x` for parameter `s`:
/// `F W[u, phi_{rho+s}]/s(x) - (W/s(x)) phi_{rho+s}/u` with `phi^+` at `l`, `phi^-` at `r`.
pub fn boundary_term(fd: &FDiffusion, s: f64, end: Endpoint, x: f64) -> Result<LogValue> {
    let m = fd.model();
    let w = fd.weights();
    let r = fd.spec().rho_param();
    let rs = SpectralParam::new(fd.spec().rho + s)?;
    let br = match end {
        Endpoint::Left => Branch::Plus,
        Endpoint::Right => Branch::Minus,
    };
    let mut wu = LogValue::ZERO;
    if w.q1 != 0.0 {
        wu = wu + m.cross_wronskian(r, Branch::Plus, rs, br, x)?.value.scale(w.q1);
    }
    if w.q2 != 0.0 {
        wu = wu + m.cross_wronskian(r, Branch::Minus, rs, br, x)?.value.scale(w.q2);
    }
    let sc = m.scale_density(x)?;
    let u = fd.u_hat(x)?;
    let f = LogValue::from_f64(fd.spec().offset()) + fd.v_hat(x)? / u;
    let t1 = f * wu / sc;
    let t2 = fd.wronskian_w(x)?.value / sc * m.phi(rs, br, x)? / u;
    Ok(t1 - t2)
}

/// Numerically tests whether the boundary expressions tend to zero at both
/// endpoints for each `s` (each must exceed `b`). A limit counts as zero when the
/// value at the outermost probe is below 1e-6 of its magnitude at the reference
/// point and the magnitudes are non-increasing over the last three decades.
pub fn boundary_limit_test(fd: &FDiffusion, s_values: &[f64]) -> Verdict {
    let mut inconclusive = false;
    for &s in s_values {
        if !(s > fd.spec().b) {
            return Verdict::Inconclusive;
        }
        for end in [Endpoint::Left, Endpoint::Right] {
            match boundary_limit_is_zero(fd, s, end) {
                Some(true) => {}
                Some(false) => return Verdict::Fail,
                None => inconclusive = true,
            }
        }
    }
    if inconclusive {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

fn boundary_limit_is_zero(fd: &FDiffusion, s: f64, end: Endpoint) -> Option<bool> {
    let grid = probe_grid(fd.model(), end);
    let reference = boundary_term(fd, s, end, reference_point(fd.model())).ok()?.abs();
    let vals: Vec<LogValue> = grid.iter().map(|&x| boundary_term(fd, s, end, x)).collect::<Result<_>>().ok()?;
    // Compare in log space relative to the reference so magnitudes never overflow;
    // values below the roundoff floor count as exact zeros.
    let rel: Vec<f64> = vals
        .iter()
        .map(|v| (v.abs() / reference).to_f64())
        .map(|v| if v < ROUNDOFF_FLOOR { 0.0 } else { v })
        .collect();
    if rel.iter().any(|v| v.is_nan()) {
        return None;
    }
    let tail = match fd.model().kind() {
        ModelKind::Ou => 7,
        _ => 4,
    };
    tends_to_zero(&rel, 1.0, tail).or_else(|| power_law_decay(&rel[rel.len() - tail..]).then_some(true))
}

const ROUNDOFF_FLOOR: f64 = 1e-15;

/// Magnitudes falling by a steady factor per grid step (a decaying power of the
/// distance on these grids) tend to zero even when they are still above the
/// 1e-6 threshold at the outermost probe.
fn power_law_decay(tail: &[f64]) -> bool {
    let r: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    if r.len() < 3 || r.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi < 0.9 && hi - lo < 0.05
}

/// Estimates the bias `d/dt E[F_t | F_0 = y] - ∫ (a + bF) p_F dF` at time `t`,
/// with the time derivative by a central difference of quadrature means.
pub fn martingale_defect(fd: &FDiffusion, y: f64, t: f64) -> Result<f64> {
    let x0 = fd.inverse_map(y)?;
    let h = 1e-3 * t;
    let rate = (mean_f(fd, x0, t + h)? - mean_f(fd, x0, t - h)?) / (2.0 * h);
    let s = fd.spec();
    let drift = s.a * mass_f(fd, x0, t)? + s.b * mean_f(fd, x0, t)?;
    Ok(rate - drift)
}

fn expectation(fd: &FDiffusion, x0: f64, t: f64, g: impl Fn(f64) -> Result<LogValue>) -> Result<f64> {
    let m = fd.model();
    let (lo, hi) = m.state_space();
    let f = |x: f64| -> f64 {
        let v = || -> Result<LogValue> { Ok(g(x)? * fd.transition_pdf_x_rho(t, x0, x)?) };
        v().map(|v| v.to_f64()).unwrap_or(f64::NAN)
    };
    let q = QuadratureSpec::new(1e-300, 1e-11);
    let r = crate::numerics::integrate_with_points(f, lo, hi, &[x0], &q)?;
    if !r.converged {
        return Err(crate::Error::NonConvergence {
            what: "expectation quadrature",
            iterations: r.evaluations,
        });
    }
    Ok(r.value)
}

/// `E[F_t 1{alive} | X_0 = x0]`, computed in the underlying variable.
pub fn mean_f(fd: &FDiffusion, x0: f64, t: f64) -> Result<f64> {
    let offset = LogValue::from_f64(fd.spec().offset());
    expectation(fd, x0, t, |x| Ok(offset + fd.v_hat(x)? / fd.u_hat(x)?))
}

/// Survival probability `P(F_t in the state space | X_0 = x0)`.
pub fn mass_f(fd: &FDiffusion, x0: f64, t: f64) -> Result<f64> {
    expectation(fd, x0, t, |_| Ok(LogValue::ONE))
}

/// Closed-form report stored on every [`FDiffusion`].
pub(crate) fn closed_form_report(model: &UnderlyingModel, spec: &MapSpec, f_left: f64) -> ClassificationReport {
    let w = spec.weights();
    let (left, right) = closed_form_boundaries(model, w.q1, w.q2);
    let (conserves_rate, rule) = closed_form_conservation(model, spec, f_left);
    ClassificationReport {
        left,
        right,
        conserves_rate,
        rule_fired: format!("boundaries from (q1 > 0, q2 > 0) = ({}, {}); conservation: {rule}", w.q1 > 0.0, w.q2 > 0.0),
        numeric_confirmed: false,
    }
}

/// The closed-form report with `numeric_confirmed` set when the integrability
/// probes agree with the closed-form facts and the limit test at
/// `s in {b + 0.5, b + 1, b + 2}` agrees with the conservation verdict.
/// Inconclusive numerics leave the closed-form verdict in place.
pub fn classify_with_numerics(fd: &FDiffusion) -> ClassificationReport {
    let mut report = fd.classification().clone();
    let probes_agree = InnerProduct::ALL.iter().all(|&w| integrability_probe(fd, w) == closed_form_integrability(fd.model(), w));
    let b = fd.spec().b;
    let limit = boundary_limit_test(fd, &[b + 0.5, b + 1.0, b + 2.0]);
    let expected = if report.conserves_rate { Verdict::Pass } else { Verdict::Fail };
    report.numeric_confirmed = probes_agree && limit == expected;
    report.rule_fired = format!("{}; numeric limit test: {limit:?}", report.rule_fired);
    report
}
