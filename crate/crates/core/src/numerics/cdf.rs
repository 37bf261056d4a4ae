//! Tabulated cumulative distribution functions for inverse-transform sampling.
//!
//! The support is mapped onto `u ∈ [0, 1]` by a map whose derivative
//! vanishes at finite endpoints and whose image covers infinite ones. The
//! transformed density is tabulated on adaptive cells with five equispaced
//! nodes each; a cell is accepted once Boole's rule and the composite
//! Simpson rule on the same nodes agree. Inside a cell the CDF is the
//! integral of the interpolating quartic, which inverts by safeguarded
//! Newton iteration.

use std::sync::OnceLock;

use crate::error::{domain, Error, Result};

const MAX_CELLS: usize = 200_000;
const MAX_DEPTH: usize = 60;

/// Coordinate map from `u ∈ [0, 1]` onto the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// `x = lo + (hi - lo)(3u² - 2u³)`.
    Finite { lo: f64, hi: f64 },
    /// `x = lo + scale r²` with `r = u/(1-u)`.
    LowerBounded { lo: f64, scale: f64 },
    /// `x = hi - scale r²` with `r = (1-u)/u`.
    UpperBounded { hi: f64, scale: f64 },
    /// `x = center + scale w/(1-w²)` with `w = 2u - 1`.
    Line { center: f64, scale: f64 },
}

impl Support {
    /// Default map for `(lo, hi)`; infinite ends use unit scale.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        Self::scaled(lo, hi, 0.0, 1.0)
    }

    /// Map for `(lo, hi)` with a location and scale hint for infinite ends.
    pub fn scaled(lo: f64, hi: f64, center: f64, scale: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || !(lo < hi) || !(scale > 0.0) {
            return Err(domain("build_cdf_table", format!("bad support ({lo}, {hi}) / scale {scale}")));
        }
        Ok(match (lo.is_finite(), hi.is_finite()) {
            (true, true) => Support::Finite { lo, hi },
            (true, false) => Support::LowerBounded { lo, scale },
            (false, true) => Support::UpperBounded { hi, scale },
            (false, false) => Support::Line { center, scale },
        })
    }

    pub fn map(&self, u: f64) -> f64 {
        match *self {
            Support::Finite { lo, hi } => lo + (hi - lo) * u * u * (3.0 - 2.0 * u),
            Support::LowerBounded { lo, scale } => {
                let r = u / (1.0 - u);
                lo + scale * r * r
            }
            Support::UpperBounded { hi, scale } => {
                let r = (1.0 - u) / u;
                hi - scale * r * r
            }
            Support::Line { center, scale } => {
                let w = 2.0 * u - 1.0;
                center + scale * w / ((1.0 - w) * (1.0 + w))
            }
        }
    }

    pub fn jacobian(&self, u: f64) -> f64 {
        match *self {
            Support::Finite { lo, hi } => (hi - lo) * 6.0 * u * (1.0 - u),
            Support::LowerBounded { scale, .. } => {
                let s = 1.0 - u;
                2.0 * scale * u / (s * s * s)
            }
            Support::UpperBounded { scale, .. } => 2.0 * scale * (1.0 - u) / (u * u * u),
            Support::Line { scale, .. } => {
                let w = 2.0 * u - 1.0;
                let d = (1.0 - w) * (1.0 + w);
                2.0 * scale * (1.0 + w * w) / (d * d)
            }
        }
    }

    pub fn inverse(&self, x: f64) -> f64 {
        match *self {
            Support::Finite { lo, hi } => {
                let y = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                // Smoothstep is monotone; bisect then polish.
                let (mut a, mut b) = (0.0f64, 1.0f64);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if m * m * (3.0 - 2.0 * m) < y {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                0.5 * (a + b)
            }
            Support::LowerBounded { lo, scale } => {
                if x <= lo {
                    return 0.0;
                }
                let r = ((x - lo) / scale).sqrt();
                if r.is_infinite() {
                    1.0
                } else {
                    r / (1.0 + r)
                }
            }
            Support::UpperBounded { hi, scale } => {
                if x >= hi {
                    return 1.0;
                }
                let r = ((hi - x) / scale).sqrt();
                if r.is_infinite() {
                    0.0
                } else {
                    1.0 / (1.0 + r)
                }
            }
            Support::Line { center, scale } => {
                let y = (x - center) / scale;
                if y.is_infinite() {
                    return if y > 0.0 { 1.0 } else { 0.0 };
                }
                let w = 2.0 * y / (1.0 + (1.0 + 4.0 * y * y).sqrt());
                0.5 * (w + 1.0)
            }
        }
    }
}

/// Monomial coefficients of `∫_0^v L_k(s) ds` for the quartic Lagrange
/// basis on nodes `0, 1/4, 1/2, 3/4, 1`.
fn basis() -> &'static [[f64; 6]; 5] {
    static B: OnceLock<[[f64; 6]; 5]> = OnceLock::new();
    B.get_or_init(|| {
        let nodes = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut out = [[0.0; 6]; 5];
        for k in 0..5 {
            let mut poly = vec![1.0];
            let mut denom = 1.0;
            for j in 0..5 {
                if j == k {
                    continue;
                }
                let mut next = vec![0.0; poly.len() + 1];
                for (i, &c) in poly.iter().enumerate() {
                    next[i + 1] += c;
                    next[i] -= nodes[j] * c;
                }
                poly = next;
                denom *= nodes[k] - nodes[j];
            }
            for (i, &c) in poly.iter().enumerate() {
                out[k][i + 1] = c / denom / (i + 1) as f64;
            }
        }
        out
    })
}

#[derive(Debug, Clone)]
struct Cell {
    u0: f64,
    width: f64,
    /// CDF polynomial in the local coordinate, scaled by the cell width.
    cdf: [f64; 6],
    /// Density polynomial (derivative of `cdf` in the local coordinate).
    pdf: [f64; 5],
}

impl Cell {
    fn new(u0: f64, width: f64, f: &[f64; 5]) -> Self {
        let b = basis();
        let mut cdf = [0.0; 6];
        for k in 0..5 {
            for i in 0..6 {
                cdf[i] += width * f[k] * b[k][i];
            }
        }
        let mut pdf = [0.0; 5];
        for i in 0..5 {
            pdf[i] = cdf[i + 1] * (i + 1) as f64;
        }
        Cell { u0, width, cdf, pdf }
    }

    fn cdf_at(&self, v: f64) -> f64 {
        self.cdf.iter().rev().fold(0.0, |acc, &c| acc * v + c)
    }

    fn pdf_at(&self, v: f64) -> f64 {
        self.pdf.iter().rev().fold(0.0, |acc, &c| acc * v + c)
    }

    fn mass(&self) -> f64 {
        self.cdf.iter().sum()
    }

    /// Local coordinate `v ∈ [0, 1]` with `cdf_at(v) = target`.
    fn invert(&self, target: f64) -> f64 {
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mut v = if self.mass() > 0.0 { (target / self.mass()).clamp(0.0, 1.0) } else { 0.5 };
        for _ in 0..100 {
            let g = self.cdf_at(v) - target;
            if g.abs() <= 1e-16 * self.mass().max(1e-300) {
                return v;
            }
            if g < 0.0 {
                a = v;
            } else {
                b = v;
            }
            let d = self.pdf_at(v);
            let newton = v - g / d;
            v = if d > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
            if b - a < 1e-15 {
                break;
            }
        }
        v
    }
}

/// Outcome of inverting a (possibly defective) CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CdfDraw {
    Value(f64),
    /// The uniform variate fell in the missing mass.
    Defect,
}

/// Immutable tabulated CDF.
#[derive(Debug, Clone)]
pub struct CdfTable {
    support: Support,
    cells: Vec<Cell>,
    cum: Vec<f64>,
    mass: f64,
    tol: f64,
}

/// Builds a table over `(lo, hi)` with default coordinate scaling.
pub fn build_cdf_table(density: impl Fn(f64) -> f64, support: (f64, f64), n_min: usize, tol: f64) -> Result<CdfTable> {
    CdfTable::build(density, Support::new(support.0, support.1)?, n_min, tol)
}

/// Inverts `table` at `u ∈ [0, 1]`.
pub fn invert_cdf(table: &CdfTable, u: f64) -> Result<CdfDraw> {
    table.invert(u)
}

impl CdfTable {
    pub fn build(density: impl Fn(f64) -> f64, support: Support, n_min: usize, tol: f64) -> Result<Self> {
        if !(tol > 0.0) || n_min == 0 {
            return Err(Error::InvalidParameter(format!("need tol > 0 and n_min >= 1, got {tol}, {n_min}")));
        }
        let q = |u: f64| -> Result<f64> {
            if u <= 0.0 || u >= 1.0 {
                return Ok(0.0);
            }
            let x = support.map(u);
            let p = density(x);
            if p.is_nan() || p == f64::INFINITY {
                return Err(domain("build_cdf_table", format!("density is {p} at {x}")));
            }
            if p < 0.0 {
                return Err(Error::NegativeDensity { x, value: p });
            }
            let v = p * support.jacobian(u);
            Ok(if v.is_finite() { v } else { 0.0 })
        };
        let cell_tol = 0.05 * tol;
        let mut cells = Vec::new();
        let w0 = 1.0 / n_min as f64;
        let mut right = q(0.0)?;
        for i in 0..n_min {
            let u0 = i as f64 * w0;
            let f = [
                right,
                q(u0 + 0.25 * w0)?,
                q(u0 + 0.5 * w0)?,
                q(u0 + 0.75 * w0)?,
                q(if i + 1 == n_min { 1.0 } else { u0 + w0 })?,
            ];
            right = f[4];
            refine(&q, u0, w0, f, cell_tol, 0, &mut cells)?;
        }
        let mut cum = Vec::with_capacity(cells.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for c in &cells {
            acc += c.mass().max(0.0);
            cum.push(acc);
        }
        if acc > 1.0 + tol {
            return Err(Error::MassExceedsOne { mass: acc, tol });
        }
        Ok(CdfTable {
            support,
            cells,
            cum,
            mass: acc,
            tol,
        })
    }

    /// Total tabulated mass (`<= 1`; the remainder is the defect).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn cells(&self) -> usize {
        self.cells.len()
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// Tabulated CDF at `x` (not renormalised).
    pub fn cdf(&self, x: f64) -> f64 {
        let u = self.support.inverse(x);
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return self.mass;
        }
        let i = self.cells.partition_point(|c| c.u0 <= u).saturating_sub(1);
        let c = &self.cells[i];
        let v = ((u - c.u0) / c.width).clamp(0.0, 1.0);
        (self.cum[i] + c.cdf_at(v)).clamp(0.0, self.mass)
    }

    pub fn invert(&self, u: f64) -> Result<CdfDraw> {
        if !(0.0..=1.0).contains(&u) {
            return Err(domain("invert_cdf", format!("u = {u} outside [0, 1]")));
        }
        if u > self.mass {
            return Ok(CdfDraw::Defect);
        }
        let i = self.cum.partition_point(|&c| c < u).clamp(1, self.cells.len()) - 1;
        let c = &self.cells[i];
        let v = c.invert(u - self.cum[i]);
        let x = self.support.map(c.u0 + v * c.width);
        Ok(CdfDraw::Value(x))
    }
}

fn refine(
    q: &impl Fn(f64) -> Result<f64>,
    u0: f64,
    w: f64,
    f: [f64; 5],
    tol: f64,
    depth: usize,
    out: &mut Vec<Cell>,
) -> Result<()> {
    let boole = w / 90.0 * (7.0 * (f[0] + f[4]) + 32.0 * (f[1] + f[3]) + 12.0 * f[2]);
    let simpson = w / 12.0 * (f[0] + 4.0 * (f[1] + f[3]) + 2.0 * f[2] + f[4]);
    if (boole - simpson).abs() <= tol * w || depth >= MAX_DEPTH || w < 1e-13 {
        out.push(Cell::new(u0, w, &f));
        if out.len() > MAX_CELLS {
            return Err(Error::NonConvergence {
                what: "CDF table refinement",
                iterations: MAX_CELLS,
            });
        }
        return Ok(());
    }
    let h = 0.5 * w;
    let left = [f[0], q(u0 + 0.125 * w)?, f[1], q(u0 + 0.375 * w)?, f[2]];
    let right = [f[2], q(u0 + 0.625 * w)?, f[3], q(u0 + 0.875 * w)?, f[4]];
    refine(q, u0, h, left, tol, depth + 1, out)?;
    refine(q, u0 + h, h, right, tol, depth + 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::{integrate, QuadratureSpec};
    use proptest::prelude::*;

    fn value(d: CdfDraw) -> f64 {
        match d {
            CdfDraw::Value(x) => x,
            CdfDraw::Defect => panic!("unexpected defect"),
        }
    }

    #[test]
    fn uniform_and_exponential() {
        let t = build_cdf_table(|_| 1.0, (0.0, 1.0), 8, 1e-12).unwrap();
        assert!((t.mass() - 1.0).abs() < 1e-13);
        assert!((value(invert_cdf(&t, 0.25).unwrap()) - 0.25).abs() < 1e-12);
        let t = build_cdf_table(|x| (-x).exp(), (0.0, f64::INFINITY), 16, 1e-12).unwrap();
        let x = value(invert_cdf(&t, 1.0 - (-1f64).exp()).unwrap());
        assert!((x - 1.0).abs() < 1e-10);
    }

    #[test]
    fn defective_mass() {
        let t = build_cdf_table(|x| 0.7 * (-x).exp(), (0.0, f64::INFINITY), 16, 1e-12).unwrap();
        assert!((t.mass() - 0.7).abs() < 1e-11);
        assert_eq!(invert_cdf(&t, 0.71).unwrap(), CdfDraw::Defect);
        assert!(matches!(invert_cdf(&t, 0.69).unwrap(), CdfDraw::Value(_)));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_cdf_table(|x| x - 0.5, (0.0, 1.0), 8, 1e-10),
            Err(Error::NegativeDensity { .. })
        ));
        assert!(matches!(
            build_cdf_table(|_| 1.5, (0.0, 1.0), 8, 1e-10),
            Err(Error::MassExceedsOne { .. })
        ));
        let t = build_cdf_table(|_| 1.0, (0.0, 1.0), 8, 1e-10).unwrap();
        assert!(invert_cdf(&t, 1.5).is_err());
    }

    #[test]
    fn gaussian_on_the_line_matches_quadrature_median() {
        let pdf = |x: f64| (-(x - 3.0) * (x - 3.0) / 8.0).exp() / (8.0 * std::f64::consts::PI).sqrt();
        let sup = Support::scaled(f64::NEG_INFINITY, f64::INFINITY, 3.0, 2.0).unwrap();
        let t = CdfTable::build(pdf, sup, 32, 1e-11).unwrap();
        assert!((value(t.invert(0.5).unwrap()) - 3.0).abs() < 1e-9);
        let q = integrate(pdf, f64::NEG_INFINITY, 4.5, &QuadratureSpec::default()).unwrap().value;
        assert!((t.cdf(4.5) - q).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn round_trip(x in 0.01f64..15.0, k in 0.5f64..4.0) {
            // Gamma(k, 1) density.
            let ln_g = crate::specfun::gamma_ln(k).unwrap();
            let pdf = move |y: f64| if y <= 0.0 { 0.0 } else { ((k - 1.0) * y.ln() - y - ln_g).exp() };
            let t = CdfTable::build(pdf, Support::scaled(0.0, f64::INFINITY, 0.0, k).unwrap(), 32, 1e-11).unwrap();
            let u = t.cdf(x);
            prop_assume!(u > 1e-9 && u < 1.0 - 1e-9);
            let back = value(t.invert(u).unwrap());
            let dens = pdf(x);
            prop_assert!((back - x).abs() <= 1e-9 / dens.max(1e-3), "{} vs {}", back, x);
        }
    }
}
