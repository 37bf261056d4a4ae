//! Exact sampling of the underlying diffusions, inverse-CDF sampling of
//! F-diffusion transitions with absorption, path generation and estimators.
//!
//! Random streams: path `i` of a run with seed `s` uses `ChaCha8Rng` seeded
//! with `seed_from_u64(s)` and positioned on stream `i`, so every path is
//! reproducible on its own and results do not depend on the thread count.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::cdf::{CdfDraw, CdfTable, Support};
use crate::transform::FDiffusion;
use crate::underlying::{Endpoint, ModelKind, UnderlyingModel};

/// Observation times (strictly increasing, positive) and the initial value of F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSchedule {
    pub times: Vec<f64>,
    pub f0: f64,
}

impl PathSchedule {
    pub fn new(times: Vec<f64>, f0: f64) -> Result<Self> {
        let s = PathSchedule { times, f0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidParameter("schedule has no times".into()));
        }
        let mut prev = 0.0;
        for &t in &self.times {
            if !(t.is_finite() && t > prev) {
                return Err(Error::InvalidParameter(format!(
                    "schedule times must be finite, positive and strictly increasing: {:?}",
                    self.times
                )));
            }
            prev = t;
        }
        if !self.f0.is_finite() {
            return Err(Error::InvalidParameter(format!("f0 = {} is not finite", self.f0)));
        }
        Ok(())
    }
}

/// A sampled value of F: alive, or absorbed at a killing boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathValue {
    Live(f64),
    Absorbed,
}

impl PathValue {
    pub fn live(self) -> Option<f64> {
        match self {
            PathValue::Live(v) => Some(v),
            PathValue::Absorbed => None,
        }
    }
}

impl fmt::Display for PathValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathValue::Live(v) => write!(f, "{v}"),
            PathValue::Absorbed => f.write_str("ABSORBED"),
        }
    }
}

/// One path: the value at each schedule time. Once absorbed, always absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub values: Vec<PathValue>,
    pub seed: u64,
    pub stream: u64,
}

/// The generator for path `stream` of a run seeded with `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact draw of `X_t` given `X_0 = x0`: Gaussian for OU, scaled noncentral
/// chi-square with `2(mu + 1)` degrees of freedom for SQB and CIR.
pub fn sample_x<R: Rng + ?Sized>(model: &UnderlyingModel, t: f64, x0: f64, rng: &mut R) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!("need t > 0, got {t}")));
    }
    if !model.contains(x0) {
        let (lo, hi) = model.state_space();
        return Err(Error::OutOfRange { value: x0, lo, hi });
    }
    let nu2 = model.nu0() * model.nu0();
    match model.kind() {
        ModelKind::Ou => {
            let l1 = model.lambda1();
            let kappa = 2.0 * l1 / nu2;
            let mean = (x0 - model.shift()) * (-l1 * t).exp();
            let sd = (-(-2.0 * l1 * t).exp_m1() / kappa).sqrt();
            let z: f64 = StandardNormal.sample(rng);
            Ok(model.shift() + mean + sd * z)
        }
        kind => {
            // X_t = c * chi'^2(d, lambda) with d = 4 lambda0 / nu0^2.
            let (c, decay) = match kind {
                ModelKind::Sqb => (0.25 * nu2 * t, 1.0),
                _ => {
                    let l1 = model.lambda1();
                    (0.25 * nu2 * -(-l1 * t).exp_m1() / l1, (-l1 * t).exp())
                }
            };
            let d = 4.0 * model.lambda0() / nu2;
            let nc = x0 * decay / c;
            let n = if nc > 0.0 {
                let p = Poisson::new(0.5 * nc).map_err(|e| Error::InvalidParameter(format!("Poisson({}): {e}", 0.5 * nc)))?;
                p.sample(rng)
            } else {
                0.0
            };
            // chi^2(k) = Gamma(k/2, 2)
            let g = Gamma::new(0.5 * d + n, 2.0).map_err(|e| Error::InvalidParameter(format!("Gamma: {e}")))?;
            Ok(c * g.sample(rng))
        }
    }
}

/// Default tolerance of the transition CDF tables.
pub const DEFAULT_TABLE_TOL: f64 = 1e-10;

/// Inverse-CDF sampler of one F-transition over time `t` from a fixed start.
///
/// The table is built over the underlying variable from the X^(rho) density and
/// draws are mapped through F; since F is strictly monotone this is inversion of
/// the F-law. The missing mass of the table is the killing probability.
#[derive(Debug, Clone)]
pub struct StepSampler<'a> {
    fd: &'a FDiffusion,
    table: CdfTable,
}

impl<'a> StepSampler<'a> {
    pub fn new(fd: &'a FDiffusion, t: f64, f0: f64, tol: f64) -> Result<Self> {
        let x0 = fd.inverse_map(f0)?;
        Self::from_x(fd, t, x0, tol)
    }

    /// Start given in the underlying variable.
    pub fn from_x(fd: &'a FDiffusion, t: f64, x0: f64, tol: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!("need t > 0, got {t}")));
        }
        let m = fd.model();
        let support = table_support(m, t, x0)?;
        let density = |x: f64| match fd.transition_pdf_x_rho(t, x0, x) {
            Ok(v) => v.to_f64(),
            Err(_) => f64::NAN,
        };
        let table = CdfTable::build(density, support, 64, tol)?;
        Ok(StepSampler { fd, table })
    }

    /// Survival probability over the step.
    pub fn mass(&self) -> f64 {
        self.table.mass().min(1.0)
    }

    /// Tabulated `P(alive and X_t <= x)`.
    pub fn cdf_x(&self, x: f64) -> f64 {
        self.table.cdf(x)
    }

    /// Draws the underlying value, `None` when killed.
    pub fn draw_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<f64>> {
        let u: f64 = rng.random();
        Ok(match self.table.invert(u)? {
            CdfDraw::Value(x) => Some(x),
            CdfDraw::Defect => None,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PathValue> {
        Ok(match self.draw_x(rng)? {
            Some(x) => PathValue::Live(self.fd.map_f(x)?),
            None => PathValue::Absorbed,
        })
    }
}

fn table_support(m: &UnderlyingModel, t: f64, x0: f64) -> Result<Support> {
    let (lo, hi) = m.state_space();
    match m.kind() {
        ModelKind::Ou => {
            let l1 = m.lambda1();
            let kappa = 2.0 * l1 / (m.nu0() * m.nu0());
            let center = m.shift() + (x0 - m.shift()) * (-l1 * t).exp();
            let sd = (-(-2.0 * l1 * t).exp_m1() / kappa).sqrt();
            Support::scaled(lo, hi, center, 2.0 * sd)
        }
        ModelKind::Sqb => Support::scaled(lo, hi, 0.0, x0 + m.lambda0() * t),
        ModelKind::Cir => {
            let e = (-m.lambda1() * t).exp();
            Support::scaled(lo, hi, 0.0, x0 * e + m.lambda0() / m.lambda1() * (1.0 - e))
        }
    }
}

/// One transition of F over time `t` from `f0`.
pub fn sample_f_step<R: Rng + ?Sized>(fd: &FDiffusion, t: f64, f0: f64, rng: &mut R) -> Result<PathValue> {
    StepSampler::new(fd, t, f0, DEFAULT_TABLE_TOL)?.draw(rng)
}

/// Chains transitions over the schedule, building one table per step.
pub fn sample_path_with<R: Rng + ?Sized>(fd: &FDiffusion, schedule: &PathSchedule, rng: &mut R) -> Result<Vec<PathValue>> {
    sample_path_tol(fd, schedule, DEFAULT_TABLE_TOL, rng)
}

/// [`sample_path_with`] with tables truncated at missing mass `tol`.
pub fn sample_path_tol<R: Rng + ?Sized>(fd: &FDiffusion, schedule: &PathSchedule, tol: f64, rng: &mut R) -> Result<Vec<PathValue>> {
    schedule.validate()?;
    let mut x = fd.inverse_map(schedule.f0)?;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(schedule.times.len());
    for &t in &schedule.times {
        match StepSampler::from_x(fd, t - prev, x, tol)?.draw_x(rng)? {
            Some(next) => {
                x = next;
                out.push(PathValue::Live(fd.map_f(x)?));
            }
            None => break,
        }
        prev = t;
    }
    out.resize(schedule.times.len(), PathValue::Absorbed);
    Ok(out)
}

/// Path `stream` of the run seeded with `seed`.
pub fn sample_path(fd: &FDiffusion, schedule: &PathSchedule, seed: u64, stream: u64) -> Result<PathSample> {
    let mut rng = path_rng(seed, stream);
    let values = sample_path_with(fd, schedule, &mut rng)?;
    Ok(PathSample { values, seed, stream })
}

/// Paths `0..n_paths` of the run seeded with `seed`, spread over `threads`
/// worker threads (0 means the available parallelism).
pub fn simulate_paths(fd: &FDiffusion, schedule: &PathSchedule, n_paths: usize, seed: u64, threads: usize) -> Result<Vec<PathSample>> {
    simulate_paths_tol(fd, schedule, n_paths, seed, threads, DEFAULT_TABLE_TOL)
}

/// [`simulate_paths`] with tables truncated at missing mass `tol`.
pub fn simulate_paths_tol(fd: &FDiffusion, schedule: &PathSchedule, n_paths: usize, seed: u64, threads: usize, tol: f64) -> Result<Vec<PathSample>> {
    schedule.validate()?;
    let threads = match threads {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
    .clamp(1, n_paths.max(1));
    let chunk = n_paths.div_ceil(threads);
    let results: Vec<Result<Vec<PathSample>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|k| {
                let range = (k * chunk).min(n_paths)..((k + 1) * chunk).min(n_paths);
                scope.spawn(move || {
                    range
                        .map(|i| {
                            let mut rng = path_rng(seed, i as u64);
                            let values = sample_path_tol(fd, schedule, tol, &mut rng)?;
                            Ok(PathSample { values, seed, stream: i as u64 })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("path worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n_paths);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Monte Carlo statistics of `F_t`. Absorbed paths enter `mean` and
/// `discounted_mean` at the value of F at the killing endpoint and are left out
/// of `mean_excluding_absorbed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `e^{-bt}` times `mean`; estimates `F0` for conserving maps with `a = 0`.
    pub discounted_mean: f64,
    pub discounted_stderr: f64,
    pub absorbed_fraction: f64,
    pub absorbed_value: f64,
    pub mean_excluding_absorbed: f64,
}

/// Estimates the law of `F_t` from `n` draws; refuses maps that do not conserve
/// the expectation rate or have `a != 0`.
pub fn estimate_drift_law<R: Rng + ?Sized>(fd: &FDiffusion, t: f64, f0: f64, n: usize, rng: &mut R) -> Result<DriftEstimate> {
    if !fd.classification().conserves_rate {
        return Err(Error::Refused("the map does not conserve the expectation rate; use the martingale defect instead".into()));
    }
    if fd.spec().a != 0.0 {
        return Err(Error::Refused(format!("the drift law needs a = 0, got a = {}", fd.spec().a)));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least two draws, got {n}")));
    }
    let sampler = StepSampler::new(fd, t, f0, DEFAULT_TABLE_TOL)?;
    let absorbed_value = fd.map_endpoint(Endpoint::Left);
    let (mut sum, mut sum2, mut live_sum) = (0.0, 0.0, 0.0);
    let mut absorbed = 0usize;
    for _ in 0..n {
        let v = match sampler.draw(rng)? {
            PathValue::Live(v) => {
                live_sum += v;
                v
            }
            PathValue::Absorbed => {
                absorbed += 1;
                absorbed_value
            }
        };
        sum += v;
        sum2 += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let stderr = (var / nf).sqrt();
    let disc = (-fd.spec().b * t).exp();
    let live = n - absorbed;
    Ok(DriftEstimate {
        n,
        mean,
        stderr,
        discounted_mean: disc * mean,
        discounted_stderr: disc * stderr,
        absorbed_fraction: absorbed as f64 / nf,
        absorbed_value,
        mean_excluding_absorbed: if live > 0 { live_sum / live as f64 } else { f64::NAN },
    })
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value of a KS statistic `d` with effective sample size `n`
/// (`n` for one sample, `n m / (n + m)` for two), with Stephens' correction.
pub fn ks_p_value(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut q = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        q += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * q).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        assert!(PathSchedule::new(vec![0.5, 1.0], 1.0).is_ok());
        assert!(PathSchedule::new(vec![], 1.0).is_err());
        assert!(PathSchedule::new(vec![1.0, 1.0], 1.0).is_err());
        assert!(PathSchedule::new(vec![0.0, 1.0], 1.0).is_err());
        assert!(PathSchedule::new(vec![1.0, f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn ks_p_values() {
        assert_eq!(ks_p_value(0.0, 100.0), 1.0);
        // Critical value of the Kolmogorov distribution at 5%.
        let p = ks_p_value(1.358 / (1e6f64.sqrt() + 0.12), 1e6);
        assert!((p - 0.05).abs() < 1e-3, "{p}");
        assert!(ks_p_value(0.5, 100.0) < 1e-10);
    }

    #[test]
    fn ks_statistics() {
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_statistic(&u, |x| x) - 0.005).abs() < 1e-12);
        assert_eq!(ks_two_sample(&u, &u), 0.0);
        // Dyadic grid, so the shift lands exactly on grid points.
        let d: Vec<f64> = (0..128).map(|i| (i as f64 + 0.5) / 128.0).collect();
        let shifted: Vec<f64> = d.iter().map(|x| x + 0.5).collect();
        assert_eq!(ks_two_sample(&d, &shifted), 0.5);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = path_rng(7, 0).random();
        let b: u64 = path_rng(7, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, path_rng(7, 0).random::<u64>());
    }
}
