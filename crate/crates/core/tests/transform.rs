use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solvdiff_core::numerics::{integrate, integrate_with_points, QuadratureSpec};
use solvdiff_core::transform::*;
use solvdiff_core::underlying::*;
use solvdiff_core::Error;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sqb() -> UnderlyingModel {
    UnderlyingModel::sqb(1.0, 1.25).unwrap() // mu = 1.5
}

fn sqb_killing() -> UnderlyingModel {
    UnderlyingModel::sqb(1.0, 0.8).unwrap() // mu = 0.6
}

fn cir() -> UnderlyingModel {
    UnderlyingModel::cir(0.8, 0.9, 0.6).unwrap()
}

fn ou() -> UnderlyingModel {
    UnderlyingModel::ou(0.9, 0.3, 0.7).unwrap()
}

fn models() -> Vec<UnderlyingModel> {
    vec![sqb(), sqb_killing(), cir(), ou()]
}

fn interior_points(m: &UnderlyingModel) -> Vec<f64> {
    match m.kind() {
        ModelKind::Ou => vec![-2.5, -1.0, -0.2, 0.5, 1.4, 2.8].into_iter().map(|x| x + m.shift()).collect(),
        _ => vec![0.05, 0.3, 0.9, 2.0, 4.5],
    }
}

fn spec(family: Family, b: f64, q: (f64, f64), c: (f64, f64), eps: i8) -> MapSpec {
    MapSpec::new(family, 0.8, 0.1, b, q, c, eps).unwrap()
}

/// One accepted spec per family.
fn family_specs() -> Vec<MapSpec> {
    vec![
        spec(Family::F1Plus, 0.4, (0.0, 1.0), (1.5, 0.0), 1),
        spec(Family::F1Minus, -0.3, (1.0, 0.0), (0.0, 0.7), -1),
        spec(Family::F2Plus, 0.5, (2.0, 0.0), (1.0, 0.0), 1),
        spec(Family::F2Minus, -0.2, (0.0, 1.0), (0.0, 1.0), 1),
        spec(Family::F3Plus, -0.3, (0.0, 1.0), (1.0, 0.5), 1),
        spec(Family::F3Minus, -0.4, (1.0, 0.0), (0.3, 1.0), -1),
        spec(Family::F4Plus, 0.6, (1.0, 0.5), (1.0, 0.0), 1),
        spec(Family::F4Minus, 0.3, (0.4, 1.0), (0.0, 2.0), 1),
        spec(Family::F5, 0.5, (1.0, 1.0), (1.0, 0.8), 1),
        spec(Family::General, 0.5, (1.0, 2.0), (-1.0, 2.0), 1),
        MapSpec::new(Family::Driftless, 0.8, 0.0, 0.0, (1.0, 0.5), (0.2, 1.0), 1).unwrap(),
    ]
}

fn fds() -> Vec<FDiffusion> {
    let mut out = Vec::new();
    for m in models() {
        for s in family_specs() {
            out.push(FDiffusion::new(m, s).unwrap_or_else(|e| panic!("{m:?} {s:?}: {e}")));
        }
    }
    out
}

fn f_derivs(fd: &FDiffusion, x: f64) -> (f64, f64, f64) {
    let [u, u1, u2] = fd.u_hat_jet(x).unwrap().map(|v| v.to_f64());
    let [v, v1, v2] = fd.v_hat_jet(x).unwrap().map(|v| v.to_f64());
    let w = u * v1 - u1 * v;
    let f1 = w / (u * u);
    let f2 = (u * v2 - u2 * v) / (u * u) - 2.0 * u1 * w / (u * u * u);
    (fd.map_f(x).unwrap(), f1, f2)
}

#[test]
fn map_solves_the_affine_ode() {
    for fd in fds() {
        let m = fd.model();
        let s = fd.spec();
        for x in interior_points(m) {
            let (f, f1, f2) = f_derivs(&fd, x);
            let [u, u1, _] = fd.u_hat_jet(x).unwrap().map(|v| v.to_f64());
            let nu = m.diffusion(x).unwrap();
            let gen = 0.5 * nu * nu * f2 + (m.drift(x).unwrap() + nu * nu * u1 / u) * f1;
            let rhs = s.a + s.b * f;
            let scale = gen.abs().max(rhs.abs()).max((0.5 * nu * nu * f2).abs()).max(1e-300);
            assert!((gen - rhs).abs() / scale < 1e-7, "{} {:?} x={x}: {gen} vs {rhs}", s.family, m.kind());
        }
    }
}

#[test]
fn generating_function_and_numerator() {
    let m = sqb();
    let s = spec(Family::F1Plus, 0.4, (0.0, 1.0), (1.5, 0.0), 1);
    let fd = FDiffusion::new(m, s).unwrap();
    let r = s.rho_param();
    let rb = s.rho_b_param();
    for x in interior_points(&m) {
        let u = fd.u_hat(x).unwrap();
        assert!(u.rel_diff(&m.phi(r, Branch::Minus, x).unwrap()) < 1e-15);
        let f = -s.a / s.b + 1.5 * (m.phi(rb, Branch::Plus, x).unwrap() / m.phi(r, Branch::Minus, x).unwrap()).to_f64();
        assert!(rel(fd.map_f(x).unwrap(), f) < 1e-13);
    }
    // Log-space sum equals direct sum.
    let g = spec(Family::General, 0.5, (1.3, 0.7), (1.0, -1.0), 1);
    let fd = FDiffusion::new(m, g).unwrap();
    for x in interior_points(&m) {
        let direct = 1.3 * m.phi(r, Branch::Plus, x).unwrap().to_f64() + 0.7 * m.phi(r, Branch::Minus, x).unwrap().to_f64();
        assert!(rel(fd.u_hat(x).unwrap().to_f64(), direct) < 1e-12);
        assert!(fd.u_hat(x).unwrap().sign() > 0);
    }
    // With c1 = 1, c2 = -1 the numerator has exactly one zero, where phi^+ = phi^-.
    let grid = scan_grid(&m, 400);
    let signs: Vec<i8> = grid.iter().map(|&x| fd.v_hat(x).unwrap().sign()).collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(changes, 1);
    let i = signs.windows(2).position(|w| w[0] != w[1]).unwrap();
    let rb = g.rho_b_param();
    let h = |t: f64| {
        let x = t.exp();
        (m.phi(rb, Branch::Plus, x).unwrap() / m.phi(rb, Branch::Minus, x).unwrap()).ln_abs()
    };
    let spec = solvdiff_core::numerics::RootSpec::new(grid[i].ln(), grid[i + 1].ln());
    let x0 = solvdiff_core::numerics::find_root(h, &spec).unwrap().exp();
    assert!(fd.v_hat(x0 * 0.999).unwrap().sign() != fd.v_hat(x0 * 1.001).unwrap().sign());
}

#[test]
fn dual_subfamilies_have_positive_half_line() {
    for m in models() {
        for sub in [Subfamily::I, Subfamily::II] {
            for b in [0.4, -0.3] {
                let fd = FDiffusion::new(m, MapSpec::dual(sub, 0.8, 0.0, b, 2.0).unwrap()).unwrap();
                assert_eq!(fd.state_space_f(), (0.0, f64::INFINITY), "{:?} {sub:?} b={b}", m.kind());
                assert_eq!(fd.map_sign(), if sub == Subfamily::I { 1 } else { -1 });
            }
        }
    }
    let fd = FDiffusion::new(cir(), MapSpec::dual(Subfamily::I, 0.8, 0.5, 0.25, 1.0).unwrap()).unwrap();
    assert_eq!(fd.state_space_f(), (-2.0, f64::INFINITY));
}

#[test]
fn endpoint_values_match_raw_evaluation() {
    for fd in fds() {
        let m = fd.model();
        let (fl, fr) = (fd.map_endpoint(Endpoint::Left), fd.map_endpoint(Endpoint::Right));
        let (lo, hi) = fd.state_space_f();
        assert_eq!((lo, hi), (fl.min(fr), fl.max(fr)));
        for (end, lim) in [(Endpoint::Left, fl), (Endpoint::Right, fr)] {
            // Some limits are approached like a small power of the distance, so
            // probe as far out as raw evaluation stays accurate.
            let g: Vec<f64> = (1..=8)
                .map(|k| match (m.kind(), end) {
                    (ModelKind::Ou, Endpoint::Left) => m.shift() - 10f64.powf(0.5 * k as f64),
                    (ModelKind::Ou, Endpoint::Right) => m.shift() + 10f64.powf(0.5 * k as f64),
                    (_, Endpoint::Left) => 10f64.powi(-5 * k),
                    (_, Endpoint::Right) => 10f64.powi(k),
                })
                .collect();
            let vals: Vec<f64> = g.iter().map(|&x| fd.map_f(x).unwrap()).collect();
            // Raw evaluation may overflow, so only the best probe counts.
            if lim.is_finite() {
                let errs: Vec<f64> = vals.iter().map(|v| (v - lim).abs()).collect();
                let best = errs.iter().cloned().fold(f64::INFINITY, f64::min);
                // Slow power-law approach: errors shrink by a steady factor per probe.
                let n = errs.len();
                let (r1, r2) = (errs[n - 2] / errs[n - 3], errs[n - 1] / errs[n - 2]);
                let geometric = r2 < 0.95 && (r1 - r2).abs() < 0.05;
                assert!(best < 1e-2 * lim.abs().max(1.0) || geometric, "{} {:?} {end:?}: {vals:?} vs {lim}", fd.spec().family, m.kind());
            } else {
                let last = vals[vals.len() - 1];
                // Power-law growth: magnitudes rise by a steady factor per probe.
                let n = vals.len();
                let (g1, g2) = (vals[n - 2] / vals[n - 3], vals[n - 1] / vals[n - 2]);
                let rising = vals.windows(2).all(|w| w[1].abs() > w[0].abs()) && last.signum() == lim.signum() && g2 > 1.05 && (g1 - g2).abs() < 0.05 * g2;
                let grows = vals.contains(&lim) || rising;
                assert!(grows, "{} {:?} {end:?}: {vals:?}", fd.spec().family, m.kind());
            }
        }
    }
}

#[test]
fn driftless_wronskian_over_scale_is_constant() {
    let s = MapSpec::new(Family::Driftless, 0.8, 0.0, 0.0, (1.0, 0.5), (0.2, 1.0), 1).unwrap();
    for m in models() {
        let fd = FDiffusion::new(m, s).unwrap();
        let expect = (0.2 * 0.5 - 1.0 * 1.0) * m.wronskian_const(s.rho_param());
        for x in interior_points(&m) {
            let ratio = (fd.wronskian_w(x).unwrap().value / m.scale_density(x).unwrap()).to_f64();
            assert!(rel(ratio, expect) < 1e-9, "{:?} x={x}: {ratio} vs {expect}", m.kind());
            // sigma = sigma0 nu s / u^2 and s_F is constant.
            let u = fd.u_hat(x).unwrap();
            let sig = expect.abs() * m.diffusion(x).unwrap() * (m.scale_density(x).unwrap() / (u * u)).to_f64();
            assert!(rel(fd.sigma_at_x(x).unwrap(), sig) < 1e-9);
            let f = fd.map_f(x).unwrap();
            let (_, sf) = fd.densities_f(f).unwrap();
            assert!(rel(sf.to_f64(), 1.0 / expect.abs()) < 1e-8, "s_F = {} at F = {f}", sf.to_f64());
        }
    }
}

#[test]
fn wronskian_integral_identity() {
    for fd in fds() {
        let m = fd.model();
        let b = fd.spec().b;
        let x0 = reference_point(m);
        let ws = |x: f64| (fd.wronskian_w(x).unwrap().value / m.scale_density(x).unwrap()).to_f64();
        let integrand = |y: f64| (m.speed_density(y).unwrap() * fd.u_hat(y).unwrap() * fd.v_hat(y).unwrap()).to_f64();
        let q = QuadratureSpec::new(1e-300, 1e-10);
        for x in interior_points(m) {
            let lhs = ws(x) - ws(x0);
            let rhs = b * integrate(integrand, x0.min(x), x0.max(x), &q).unwrap().value * if x < x0 { -1.0 } else { 1.0 };
            let scale = ws(x).abs().max(ws(x0).abs());
            assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs() + 1e-12 * scale, "{} {:?} x={x}: {lhs} vs {rhs}", fd.spec().family, m.kind());
        }
    }
}

#[test]
fn reference_point_is_the_speed_median() {
    let m = cir();
    let x0 = reference_point(&m);
    let q = QuadratureSpec::new(1e-300, 1e-11);
    let d = |y: f64| m.speed_density(y).unwrap().to_f64();
    let below = integrate(d, 0.0, x0, &q).unwrap().value;
    let total = integrate(d, 0.0, f64::INFINITY, &q).unwrap().value;
    assert!((below / total - 0.5).abs() < 1e-9);
    assert_eq!(reference_point(&ou()), ou().shift());
}

#[test]
fn derivative_matches_finite_difference() {
    for fd in fds() {
        for x in interior_points(fd.model()) {
            let h = 1e-5 * x.abs().max(1.0);
            let fdiff = (fd.map_f(x + h).unwrap() - fd.map_f(x - h).unwrap()) / (2.0 * h);
            let d = fd.map_deriv(x).unwrap().to_f64();
            assert!(rel(fdiff, d) < 1e-6, "{} {:?} x={x}: {fdiff} vs {d}", fd.spec().family, fd.model().kind());
            assert_eq!(d.signum() as i8, fd.map_sign());
        }
    }
}

#[test]
fn certification_examples() {
    let m = sqb();
    let f3 = MapSpec::new(Family::F3Plus, 0.8, 0.0, 0.4, (0.0, 1.0), (1.0, 1.0), 1).unwrap();
    match FDiffusion::new(m, f3) {
        Err(Error::NotMonotone { rule }) => assert!(rule.contains("b < 0")),
        other => panic!("expected rejection, got {other:?}"),
    }
    for eps in [1, -1] {
        let f5 = MapSpec::new(Family::F5, 0.8, 0.0, 0.4, (1.0, 2.0), (1.0, 1.0), eps).unwrap();
        let fd = FDiffusion::new(m, f5).unwrap();
        assert_eq!(fd.map_sign(), eps);
    }
    let f1 = MapSpec::new(Family::F1Plus, 0.8, 0.2, 0.4, (0.0, 1.0), (1.0, 0.0), 1).unwrap();
    let fd = FDiffusion::new(m, f1).unwrap();
    assert_eq!(fd.map_sign(), 1);
    assert!(fd.map_f(1.0).unwrap() < fd.map_f(2.0).unwrap());
}

fn random_spec(rng: &mut ChaCha8Rng, family: Family) -> MapSpec {
    let mut w = || rng.random_range(0.1..3.0);
    let (q1, q2, c1, c2) = (w(), w(), w(), w());
    let b = {
        let mag = rng.random_range(0.05..0.7);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    };
    let eps = if rng.random_bool(0.5) { 1 } else { -1 };
    let rho = rng.random_range(0.8..2.0);
    let a = rng.random_range(-1.0..1.0);
    let (q, c) = match family {
        Family::F1Plus => ((0.0, q2), (c1, 0.0)),
        Family::F1Minus => ((q1, 0.0), (0.0, c2)),
        Family::F2Plus => ((q1, 0.0), (c1, 0.0)),
        Family::F2Minus => ((0.0, q2), (0.0, c2)),
        Family::F3Plus => ((0.0, q2), (c1, c2)),
        Family::F3Minus => ((q1, 0.0), (c1, c2)),
        Family::F4Plus => ((q1, q2), (c1, 0.0)),
        Family::F4Minus => ((q1, q2), (0.0, c2)),
        Family::F5 => ((q1, q2), (c1, c2)),
        Family::General => ((q1, q2), (c1, if rng.random_bool(0.5) { c2 } else { -c2 })),
        Family::Driftless => return MapSpec::new(family, rho, 0.0, 0.0, (q1, q2), (c1, -c2), eps).unwrap(),
    };
    MapSpec::new(family, rho, a, b, q, c, eps).unwrap()
}

fn wrong_drift_sign(family: Family, b: f64) -> bool {
    match family {
        Family::F3Plus | Family::F3Minus => b > 0.0,
        Family::F4Plus | Family::F4Minus | Family::F5 => b < 0.0,
        _ => false,
    }
}

#[test]
fn certification_agrees_with_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let ms = [sqb(), sqb_killing(), cir(), ou()];
    for family in Family::ALL {
        let (mut accepted, mut rejected_scan_fails, mut rejected_conservative) = (0, 0, 0);
        for i in 0..50 {
            let m = ms[i % ms.len()];
            let s = random_spec(&mut rng, family);
            let cert = certify_monotone(&m, &s).unwrap();
            let scan = scan_wronskian_sign(&m, &s, 2000).unwrap();
            if cert.ok {
                accepted += 1;
                assert_eq!(scan.sign_changes, 0, "{family} {s:?} {:?}", m.kind());
                let wrong = if cert.sign > 0 { scan.negative } else { scan.positive };
                assert_eq!(wrong, 0, "{family} {s:?}");
            } else {
                if scan.sign_changes > 0 {
                    rejected_scan_fails += 1;
                } else {
                    rejected_conservative += 1;
                }
                if !matches!(family, Family::General) {
                    assert!(wrong_drift_sign(family, s.b), "{family} rejected with b = {}: {}", s.b, cert.rule);
                }
            }
        }
        println!("{family}: accepted {accepted}, rejected with scan sign change {rejected_scan_fails}, rejected conservatively {rejected_conservative}");
    }
}

#[test]
fn sigma_closed_forms_agree_with_generic_formula() {
    for m in models() {
        for sub in [Subfamily::I, Subfamily::II] {
            for (rho, b) in [(0.8, 0.4), (1.1, -0.5)] {
                let c = 1.7;
                let fd = FDiffusion::new(m, MapSpec::dual(sub, rho, 0.0, b, c).unwrap()).unwrap();
                let pts: Vec<f64> = match m.kind() {
                    ModelKind::Ou => (0..10).map(|i| m.shift() - 3.0 + 0.65 * i as f64).collect(),
                    _ => solvdiff_core::numerics::geometric_grid(0.02, 30.0, 10),
                };
                for x in pts {
                    let generic = fd.sigma_at_x(x).unwrap();
                    let closed = sigma_dual_closed_form(&m, sub, rho, b, c, x).unwrap();
                    assert!(rel(generic, closed) < 1e-9, "{:?} {sub:?} b={b} x={x}: {generic} vs {closed}", m.kind());
                }
            }
        }
    }
}

#[test]
fn calibration_hits_local_volatility() {
    let ms = [UnderlyingModel::sqb(1.0, 1.5).unwrap(), UnderlyingModel::cir(0.3, 0.15, 0.02).unwrap(), UnderlyingModel::ou(1.0, 0.0, 0.05).unwrap()];
    for m in ms {
        for sub in [Subfamily::I, Subfamily::II] {
            let template = MapSpec::dual(sub, 0.002, 0.0, 0.004, 1.0).unwrap();
            let cal = calibrate_scale(&m, &template, 100.0, 0.25).unwrap_or_else(|e| panic!("{:?} {sub:?}: {e}", m.kind()));
            assert!(cal.residual < 1e-8, "{:?} {sub:?}: {}", m.kind(), cal.residual);
            let fd = FDiffusion::new(m, cal.spec).unwrap();
            assert!(rel(fd.map_f(cal.x).unwrap(), 100.0) < 1e-10);
            assert!(rel(fd.sigma_f(100.0).unwrap() / 100.0, 0.25) < 1e-8);
        }
    }
    let bad = MapSpec::dual(Subfamily::I, 0.5, 0.3, 0.5, 1.0).unwrap();
    assert!(calibrate_scale(&sqb(), &bad, 100.0, 0.25).is_err());
}

#[test]
fn inverse_map_round_trips() {
    for fd in fds() {
        let x = 1.0;
        let f = fd.map_f(x).unwrap();
        let back = fd.inverse_map(f).unwrap();
        assert!((back - x).abs() < 1e-8, "{} {:?}: {back}", fd.spec().family, fd.model().kind());
        let (lo, hi) = fd.state_space_f();
        assert!(matches!(fd.inverse_map(lo), Err(Error::OutOfRange { .. })));
        assert!(matches!(fd.inverse_map(hi), Err(Error::OutOfRange { .. })));
    }
}

#[test]
fn inverse_map_approaches_the_endpoint() {
    let m = cir();
    let fd = FDiffusion::new(m, MapSpec::dual(Subfamily::I, 0.8, 0.0, 0.4, 1.0).unwrap()).unwrap();
    let xs: Vec<f64> = [1e-1, 1e-3, 1e-5, 1e-7].iter().map(|&f| fd.inverse_map(f).unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[1] < w[0]), "{xs:?}");
    assert!(xs[3] < 1e-4);
}

fn mass_rho(fd: &FDiffusion, t: f64, x0: f64) -> f64 {
    let m = fd.model();
    let p = |x: f64| fd.transition_pdf_x_rho(t, x0, x).unwrap().to_f64();
    let q = QuadratureSpec::new(1e-14, 1e-12);
    let (lo, hi) = m.state_space();
    integrate_with_points(p, lo, hi, &[x0], &q).unwrap().value
}

/// Images of a grid of underlying points, used as quadrature break points in F.
fn f_breaks(fd: &FDiffusion, x_lo: f64, x_hi: f64) -> Vec<f64> {
    let xs = match fd.model().kind() {
        ModelKind::Ou => (0..=40).map(|i| x_lo + (x_hi - x_lo) * i as f64 / 40.0).collect(),
        _ => solvdiff_core::numerics::geometric_grid(x_lo, x_hi, 41),
    };
    let mut fs: Vec<f64> = xs.into_iter().map(|x| fd.map_f(x).unwrap()).collect();
    fs.sort_by(f64::total_cmp);
    fs
}

/// Mass of `p_F` over the image of `[x_lo, x_hi]`, where the underlying tails
/// beyond these points carry less than 1e-16 of the mass.
fn mass_f(fd: &FDiffusion, t: f64, x0: f64, x_lo: f64, x_hi: f64) -> f64 {
    let f0 = fd.map_f(x0).unwrap();
    let p = |f: f64| fd.transition_pdf_f(t, f0, f).unwrap().to_f64();
    let q = QuadratureSpec::new(1e-14, 1e-12);
    let br = f_breaks(fd, x_lo, x_hi);
    let (a, b) = (br[0], br[br.len() - 1]);
    let mut pts = br[1..br.len() - 1].to_vec();
    pts.push(f0);
    integrate_with_points(p, a, b, &pts, &q).unwrap().value
}

#[test]
fn killing_and_conservation_of_mass() {
    // SQB with mu < 1 and q2 > 0 is killed at zero.
    let fd = FDiffusion::new(sqb_killing(), MapSpec::dual(Subfamily::I, 0.8, 0.0, 0.4, 1.0).unwrap()).unwrap();
    let mass = mass_rho(&fd, 1.0, 0.3);
    assert!(mass < 0.99 && mass > 0.0, "{mass}");
    // OU has natural boundaries.
    for s in family_specs() {
        let fd = FDiffusion::new(ou(), s).unwrap();
        let mass = mass_rho(&fd, 0.7, fd.model().shift() + 0.4);
        assert!((mass - 1.0).abs() < 1e-8, "{}: {mass}", s.family);
    }
}

#[test]
fn f_density_mass_equals_underlying_mass() {
    let cases = [
        (sqb_killing(), MapSpec::dual(Subfamily::I, 0.8, 0.0, 0.4, 1.0).unwrap(), 0.4, (1e-12, 60.0)),
        (cir(), spec(Family::F2Plus, 0.5, (2.0, 0.0), (1.0, 0.0), 1), 1.2, (1e-12, 40.0)),
        (ou(), spec(Family::F5, 0.5, (1.0, 1.0), (1.0, 0.8), 1), 0.5, (-12.0, 12.0)),
    ];
    for (m, s, x0, (x_lo, x_hi)) in cases {
        let fd = FDiffusion::new(m, s).unwrap();
        let a = mass_rho(&fd, 0.5, x0);
        let b = mass_f(&fd, 0.5, x0, x_lo, x_hi);
        assert!((a - b).abs() < 1e-10, "{} {:?}: {a} vs {b}", s.family, m.kind());
    }
}

#[test]
fn change_of_variables_consistency() {
    for fd in fds().into_iter().step_by(3) {
        let m = fd.model();
        let pts = interior_points(m);
        let x0 = pts[2];
        let f0 = fd.map_f(x0).unwrap();
        for &x in &pts {
            let f = fd.map_f(x).unwrap();
            let pf = fd.transition_pdf_f(0.6, f0, f).unwrap();
            let lhs = pf * fd.map_deriv(x).unwrap().abs();
            let rhs = fd.transition_pdf_x_rho(0.6, x0, x).unwrap();
            assert!(lhs.rel_diff(&rhs) < 1e-7, "{} {:?} x={x}", fd.spec().family, m.kind());
        }
    }
}

#[test]
fn chapman_kolmogorov_per_family() {
    let ms = [sqb(), cir(), ou()];
    for (i, s) in family_specs().into_iter().enumerate() {
        let m = ms[i % 3];
        let fd = FDiffusion::new(m, s).unwrap();
        let pts = interior_points(&m);
        let (x0, x) = (pts[1], pts[3]);
        let direct = fd.transition_pdf_f_at_x(0.5, x0, x).unwrap().to_f64();
        let g = |y: f64| {
            let a = fd.transition_pdf_f_at_x(0.25, x0, y).unwrap();
            let b = fd.transition_pdf_f_at_x(0.25, y, x).unwrap();
            (a * b * fd.map_deriv(y).unwrap().abs()).to_f64()
        };
        let (lo, hi) = m.state_space();
        let q = QuadratureSpec::new(1e-300, 1e-9);
        let via = integrate_with_points(g, lo, hi, &[x0, x], &q).unwrap().value;
        assert!(rel(via, direct) < 1e-5, "{} {:?}: {via} vs {direct}", s.family, m.kind());
    }
}

#[test]
fn martingale_mean_grows_at_rate_b() {
    let cases = [
        (sqb(), MapSpec::new(Family::F2Plus, 0.8, 0.0, 0.3, (1.0, 0.0), (1.0, 0.0), 1).unwrap(), 1.0),
        (cir(), MapSpec::new(Family::F2Plus, 0.8, 0.0, 0.3, (1.0, 0.0), (2.0, 0.0), 1).unwrap(), 1.0),
        (ou(), MapSpec::dual(Subfamily::I, 0.8, 0.0, 0.3, 1.0).unwrap(), 0.2),
        (ou(), MapSpec::new(Family::F5, 0.8, 0.0, 0.3, (1.0, 0.5), (1.0, 1.0), 1).unwrap(), 0.2),
    ];
    let t = 0.5;
    for (m, s, x0) in cases {
        let fd = FDiffusion::new(m, s).unwrap();
        let f0 = fd.map_f(x0).unwrap();
        // F p in log space: F overflows where p underflows.
        let g = |x: f64| (fd.v_hat(x).unwrap() / fd.u_hat(x).unwrap() * fd.transition_pdf_x_rho(t, x0, x).unwrap()).to_f64();
        let (lo, hi) = m.state_space();
        let mean = integrate_with_points(g, lo, hi, &[x0], &QuadratureSpec::new(1e-300, 1e-10)).unwrap().value;
        let expect = f0 * (s.b * t).exp();
        assert!(rel(mean, expect) < 1e-5, "{} {:?}: {mean} vs {expect}", s.family, m.kind());
    }
}

#[test]
fn median_maps_through_the_inverse() {
    let m = cir();
    let fd = FDiffusion::new(m, MapSpec::dual(Subfamily::I, 0.8, 0.0, 0.4, 1.0).unwrap()).unwrap();
    let (t, x0) = (0.7, 1.0);
    let f0 = fd.map_f(x0).unwrap();
    let q = QuadratureSpec::new(1e-14, 1e-12);
    let px = |x: f64| fd.transition_pdf_x_rho(t, x0, x).unwrap().to_f64();
    let pf = |f: f64| fd.transition_pdf_f(t, f0, f).unwrap().to_f64();
    let total = integrate_with_points(px, 0.0, f64::INFINITY, &[x0], &q).unwrap().value;
    let cdf_x = |x: f64| integrate_with_points(px, 0.0, x, &[x0.min(0.5 * x)], &q).unwrap().value - 0.5 * total;
    // p_F has an integrable singularity at F = 0; break points resolve it.
    let cdf_f = |f: f64| {
        let pts: Vec<f64> = (1..=30).rev().map(|k| f * 10f64.powi(-k)).chain([f0.min(0.5 * f)]).collect();
        integrate_with_points(pf, 0.0, f, &pts, &q).unwrap().value - 0.5 * total
    };
    let rs = |a: f64, b: f64| solvdiff_core::numerics::RootSpec::new(a, b).with_tolerances(1e-12, 0.0);
    let xm = solvdiff_core::numerics::find_root(cdf_x, &rs(0.05, 20.0)).unwrap();
    let fm = solvdiff_core::numerics::find_root(cdf_f, &rs(fd.map_f(0.05).unwrap(), fd.map_f(20.0).unwrap())).unwrap();
    assert!(rel(fd.inverse_map(fm).unwrap(), xm) < 1e-7);
}

#[test]
fn f_densities_identities() {
    for fd in fds().into_iter().step_by(2) {
        let s = *fd.spec();
        for x in interior_points(fd.model()) {
            let f = fd.map_f(x).unwrap();
            let (mf, sf) = fd.densities_f(f).unwrap();
            let sig = fd.sigma_f(f).unwrap();
            assert!(rel(mf.to_f64() * sf.to_f64() * sig * sig / 2.0, 1.0) < 1e-9);
            // d/dF (1/s_F) = (a + bF) m_F.
            let h = 1e-4 * fd.map_deriv(x).unwrap().abs().to_f64() * x.abs().max(1.0);
            let inv = |g: f64| 1.0 / fd.densities_f(g).unwrap().1.to_f64();
            let lhs = (inv(f + h) - inv(f - h)) / (2.0 * h);
            let rhs = (s.a + s.b * f) * mf.to_f64();
            let tol = 1e-5 * (s.a.abs() + (s.b * f).abs()) * mf.to_f64() + 1e-9 * inv(f).abs() / h;
            assert!((lhs - rhs).abs() <= tol, "{} {:?} x={x}: {lhs} vs {rhs}", s.family, fd.model().kind());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_within_tolerance(mi in 0usize..4, si in 0usize..11, u in 0.02f64..0.98) {
        let m = models()[mi];
        let fd = FDiffusion::new(m, family_specs()[si]).unwrap();
        let x = match m.kind() {
            ModelKind::Ou => m.shift() + 6.0 * (u - 0.5),
            _ => (u * 10.0 - 5.0).exp(),
        };
        let f = fd.map_f(x).unwrap();
        let (lo, hi) = fd.state_space_f();
        // Far from the reference point F may round onto its limit.
        prop_assume!(f > lo && f < hi);
        let back = fd.map_f(fd.inverse_map(f).unwrap()).unwrap();
        prop_assert!((back - f).abs() <= 1e-10 * f.abs().max(1.0), "{f} -> {back}");
        prop_assert!(fd.sigma_f(f).unwrap() > 0.0);
    }

    #[test]
    fn map_is_strictly_monotone(mi in 0usize..4, si in 0usize..11, u in 0.0f64..1.0, d in 0.01f64..0.5) {
        let m = models()[mi];
        let fd = FDiffusion::new(m, family_specs()[si]).unwrap();
        let (x1, x2) = match m.kind() {
            ModelKind::Ou => (m.shift() + 6.0 * (u - 0.5), m.shift() + 6.0 * (u - 0.5) + d),
            _ => ((u * 10.0 - 5.0).exp(), (u * 10.0 - 5.0 + d).exp()),
        };
        let (f1, f2) = (fd.map_f(x1).unwrap(), fd.map_f(x2).unwrap());
        let diff = f2 - f1;
        prop_assume!(diff != 0.0 && diff.is_finite());
        prop_assert_eq!(diff.signum() as i8, fd.map_sign(), "{} {:?} x=({}, {}) F=({}, {})", fd.spec().family, m.kind(), x1, x2, f1, f2);
    }
}
