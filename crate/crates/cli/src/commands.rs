//! The subcommands. Each returns its output document; writing is left to the caller.

use serde::Serialize;
use serde_json::Value;
use solvdiff_core::classify::{classify_with_numerics, ClassificationReport};
use solvdiff_core::montecarlo::simulate_paths_tol;
use solvdiff_core::numerics::integrate_with_points;
use solvdiff_core::transform::{calibrate_scale, FDiffusion, MapSpec, MonotoneCertificate};
use solvdiff_core::underlying::{SpectralParam, UnderlyingModel};
use solvdiff_core::verify::{Suite, SuiteReport, VerifyOptions};

use crate::config::{Axis, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

/// Output of a command: a table, or a JSON report with a CSV fallback table.
pub enum Output {
    Table(Table),
    Report { command: &'static str, body: Value, table: Table },
}

fn build(cfg: &RunConfig, spec: MapSpec) -> CliResult<FDiffusion> {
    Ok(FDiffusion::new(cfg.require_model()?, spec)?)
}

/// `(F, sigma(F), sigma(F)/F)` on the grid, after the optional calibration.
pub fn volcurve(cfg: &RunConfig) -> CliResult<Output> {
    let model = cfg.require_model()?;
    let mut spec = cfg.require_map()?;
    let grid = cfg.require_grid()?;
    let mut table = Table::new("volcurve", vec!["F", "sigma", "sigma_loc"]);
    if let Some(c) = cfg.calibration {
        let cal = calibrate_scale(&model, &spec, c.f_target, c.local_vol)?;
        spec = cal.spec;
        table.summary("calibration_f_target", c.f_target);
        table.summary("calibration_local_vol", c.local_vol);
        table.summary("calibrated_c1", spec.c1);
        table.summary("calibrated_c2", spec.c2);
        table.summary("calibration_x", cal.x);
        table.summary("calibration_residual", cal.residual);
    }
    let fd = build(cfg, spec)?;
    for v in grid.values() {
        let (f, sigma) = match grid.axis {
            Axis::F => (v, fd.sigma_f(v)?),
            Axis::X => (fd.map_f(v)?, fd.sigma_at_x(v)?),
        };
        table.rows.push(vec![f.into(), sigma.into(), (sigma / f).into()]);
    }
    Ok(Output::Table(table))
}

/// `(F, p_F(t, F0, F))` on the grid with the total surviving mass.
pub fn density(cfg: &RunConfig) -> CliResult<Output> {
    let fd = build(cfg, cfg.require_map()?)?;
    let grid = cfg.require_grid()?;
    let d = cfg.density.ok_or(CliError::MissingBlock("density"))?;
    let x0 = fd.inverse_map(d.f0)?;
    let mut table = Table::new("density", vec!["F", "p_F"]);
    for v in grid.values() {
        let (f, p) = match grid.axis {
            Axis::F => (v, fd.transition_pdf_f(d.t, d.f0, v)?),
            Axis::X => (fd.map_f(v)?, fd.transition_pdf_f_at_x(d.t, x0, v)?),
        };
        table.rows.push(vec![f.into(), p.to_f64().into()]);
    }
    let (lo, hi) = fd.model().state_space();
    let mass = integrate_with_points(
        |x| fd.transition_pdf_x_rho(d.t, x0, x).map(|p| p.to_f64()).unwrap_or(f64::NAN),
        lo,
        hi,
        &[x0],
        &cfg.tolerance.quadrature,
    )?;
    let err_est = mass.err_est;
    let mass = mass.require()?;
    table.summary("t", d.t);
    table.summary("f0", d.f0);
    table.summary("total_mass", mass);
    table.summary("absorbed", 1.0 - mass);
    table.summary("mass_error_estimate", err_est);
    Ok(Output::Table(table))
}

/// `(x, G(x, x0, s))` for the underlying with the symmetry residual of `G/m`.
pub fn greens(cfg: &RunConfig) -> CliResult<Output> {
    let model = cfg.require_model()?;
    let grid = cfg.require_grid()?;
    let g = cfg.greens.ok_or(CliError::MissingBlock("greens"))?;
    let s = SpectralParam::new(g.s)?;
    let fd = match grid.axis {
        Axis::F => Some(build(cfg, cfg.require_map()?)?),
        Axis::X => None,
    };
    let mut table = Table::new("greens", vec!["x", "G", "symmetry_residual"]);
    let m0 = model.speed_density(g.x0)?;
    let mut worst = 0.0f64;
    for v in grid.values() {
        let x = match &fd {
            Some(fd) => fd.inverse_map(v)?,
            None => v,
        };
        let gx = model.greens_function(x, g.x0, s)?;
        let fwd = gx / model.speed_density(x)?;
        let back = model.greens_function(g.x0, x, s)? / m0;
        let r = fwd.rel_diff(&back);
        worst = worst.max(r);
        table.rows.push(vec![x.into(), gx.to_f64().into(), r.into()]);
    }
    table.summary("x0", g.x0);
    table.summary("s", g.s);
    table.summary("symmetry_max", worst);
    Ok(Output::Table(table))
}

#[derive(Serialize)]
struct ClassifyReport<'a> {
    model: UnderlyingModel,
    map: MapSpec,
    certificate: &'a MonotoneCertificate,
    #[serde(flatten)]
    classification: ClassificationReport,
}

/// Boundary types and the expectation-rate verdict with numerical confirmation.
pub fn classify(cfg: &RunConfig) -> CliResult<Output> {
    let fd = build(cfg, cfg.require_map()?)?;
    let report = ClassifyReport {
        model: *fd.model(),
        map: *fd.spec(),
        certificate: fd.certificate(),
        classification: classify_with_numerics(&fd),
    };
    let body = serde_json::to_value(&report)?;
    let table = key_value_table("classify", &body);
    Ok(Output::Report {
        command: "classify",
        body,
        table,
    })
}

/// One row per (path, time); time 0 carries the initial value.
pub fn simulate(cfg: &RunConfig) -> CliResult<Output> {
    let fd = build(cfg, cfg.require_map()?)?;
    let sim = cfg.simulation.as_ref().ok_or(CliError::MissingBlock("simulation"))?;
    let paths = simulate_paths_tol(&fd, &sim.schedule, sim.paths, sim.seed, sim.threads, cfg.tolerance.sampling_table)?;
    let mut table = Table::new("simulate", vec!["path", "time", "value"]);
    for p in &paths {
        table.rows.push(vec![Cell::Int(p.stream), Cell::Num(0.0), Cell::Num(sim.schedule.f0)]);
        for (&t, v) in sim.schedule.times.iter().zip(&p.values) {
            let value = match v.live() {
                Some(f) => Cell::Num(f),
                None => Cell::Text("ABSORBED".into()),
            };
            table.rows.push(vec![Cell::Int(p.stream), Cell::Num(t), value]);
        }
    }
    let absorbed = paths.iter().filter(|p| p.values.last().is_some_and(|v| v.live().is_none())).count();
    table.summary("seed", Cell::Int(sim.seed));
    table.summary("paths", Cell::Int(sim.paths as u64));
    table.summary("absorbed_by_final_time", Cell::Int(absorbed as u64));
    Ok(Output::Table(table))
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    passed: bool,
    suites: Vec<SuiteReport>,
}

/// Runs the verification suites. The report is returned even when a suite
/// fails; the failed criteria are listed alongside.
pub fn verify(cfg: &RunConfig) -> CliResult<(Output, Vec<u8>)> {
    let vcfg = cfg.verify.clone().unwrap_or_default();
    let mut opts = VerifyOptions::default();
    if let Some(seed) = vcfg.seed {
        opts.seed = seed;
    }
    let suites = vcfg.suites.unwrap_or_else(|| Suite::ALL.to_vec());
    let reports: Vec<SuiteReport> = suites.iter().map(|s| s.run(&opts)).collect();
    let failed: Vec<u8> = reports.iter().filter(|r| !r.passed).map(|r| r.criterion).collect();
    let mut table = Table::new("verify", vec!["criterion", "suite", "check", "measured", "tolerance", "passed", "note"]);
    for r in &reports {
        for c in &r.checks {
            table.rows.push(vec![
                Cell::Int(r.criterion as u64),
                Cell::Text(r.suite.name().into()),
                Cell::Text(c.name.clone()),
                Cell::Num(c.measured),
                Cell::Num(c.tolerance),
                Cell::Text(c.passed.to_string()),
                Cell::Text(c.note.clone()),
            ]);
        }
    }
    let body = serde_json::to_value(VerifyReport {
        seed: opts.seed,
        passed: failed.is_empty(),
        suites: reports,
    })?;
    Ok((
        Output::Report {
            command: "verify",
            body,
            table,
        },
        failed,
    ))
}

/// Flattens a JSON object into `(key, value)` rows with dotted keys.
fn key_value_table(command: &'static str, body: &Value) -> Table {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<Vec<Cell>>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, rows);
                }
            }
            Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), v, rows);
                }
            }
            Value::Number(n) => rows.push(vec![Cell::Text(prefix.into()), n.as_f64().map_or(Cell::Text(n.to_string()), Cell::Num)]),
            Value::String(s) => rows.push(vec![Cell::Text(prefix.into()), Cell::Text(s.clone())]),
            other => rows.push(vec![Cell::Text(prefix.into()), Cell::Text(other.to_string())]),
        }
    }
    let mut table = Table::new(command, vec!["field", "value"]);
    walk("", body, &mut table.rows);
    table
}
