use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::{json, Value};
use solvdiff_cli::config::{Axis, Format, GridConfig, OutputConfig, RunConfig, SimulationConfig, Spacing};
use solvdiff_cli::output::fmt_sig;
use solvdiff_core::montecarlo::PathSchedule;
use solvdiff_core::transform::{MapSpec, Subfamily};
use solvdiff_core::underlying::UnderlyingModel;
use tempfile::TempDir;

fn solvdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solvdiff")).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run_ok(cmd: &str, config: &Path, extra: &[&str]) -> String {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = solvdiff(&args);
    assert!(out.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Data rows and `# key,value` summary entries of a CSV document.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>, Vec<(String, String)>) {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    let summary = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    (header, rows, summary)
}

fn summary_value(summary: &[(String, String)], key: &str) -> f64 {
    summary.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no {key}")).1.parse().unwrap()
}

fn sqb_killing() -> Value {
    // mu = 2 lambda0 / nu0^2 - 1 = 0.5 with q2 > 0.
    json!({
        "model": {"kind": "SQB", "nu0": 1.0, "lambda0": 0.75},
        "map": {"family": "F1+", "rho": 0.8, "b": 0.4, "q2": 1.0, "c1": 1.0},
    })
}

fn ou_spec() -> Value {
    json!({
        "model": {"kind": "OU", "nu0": 0.9, "lambda0": 0.3, "lambda1": 0.7},
        "map": {"family": "F1-", "rho": 0.8, "b": 0.4, "q1": 1.0, "c2": 1.0},
    })
}

fn with(mut base: Value, extra: Value) -> Value {
    base.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    base
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    for bad in [
        with(sqb_killing(), json!({"extra": 1})),
        json!({"model": {"kind": "SQB", "nu0": 1.0, "lambda0": 0.75, "lambda2": 1.0}}),
        with(sqb_killing(), json!({"grid": {"min": 1.0, "max": 2.0, "points": 3, "step": 1}})),
    ] {
        let p = write_config(&dir, "bad.json", &bad);
        let out = solvdiff(&["classify", "--config", p.to_str().unwrap()]);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
    }
}

#[test]
fn invalid_configs_fail_before_computing() {
    let dir = TempDir::new().unwrap();
    let missing = write_config(&dir, "m.json", &json!({"model": {"kind": "SQB", "nu0": 1.0, "lambda0": 0.75}}));
    let out = solvdiff(&["classify", "--config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no `map` block"));
    let bad = write_config(&dir, "b.json", &json!({"model": {"kind": "CIR", "nu0": -1.0, "lambda0": 0.75, "lambda1": 1.0}}));
    assert!(!solvdiff(&["classify", "--config", bad.to_str().unwrap()]).status.success());
    assert!(!solvdiff(&["density"]).status.success());
}

#[test]
fn uncertified_map_reports_the_rule() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"kind": "SQB", "nu0": 1.0, "lambda0": 1.25},
        "map": {"family": "GENERAL", "rho": 0.8, "b": 0.5, "q1": 1.0, "q2": 1.0, "c1": 1.0, "c2": 0.5},
    });
    let p = write_config(&dir, "c.json", &cfg);
    let out = solvdiff(&["classify", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not certified monotone"));
}

#[test]
fn killing_bessel_classification() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "k.json", &sqb_killing());
    let v: Value = serde_json::from_str(&run_ok("classify", &p, &["--format", "json"])).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["left"], "regular-killing");
    assert_eq!(v["certificate"]["ok"], true);
    assert_eq!(v["numeric_confirmed"], true);
    let (header, rows, _) = parse_csv(&run_ok("classify", &p, &["--format", "csv"]));
    assert_eq!(header, ["field", "value"]);
    assert!(rows.iter().any(|r| r[0] == "left" && r[1] == "regular-killing"));
}

#[test]
fn ou_conserves_expectation_rate() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "ou.json", &ou_spec());
    let v: Value = serde_json::from_str(&run_ok("classify", &p, &["--format", "json"])).unwrap();
    assert_eq!(v["conserves_rate"], true);
    for end in ["left", "right"] {
        assert!(v[end].as_str().unwrap().ends_with("natural"), "{}", v[end]);
    }
}

#[test]
fn density_mass_summary() {
    let dir = TempDir::new().unwrap();
    let grid = json!({"grid": {"axis": "x", "min": -2.0, "max": 2.0, "points": 9}, "density": {"t": 0.5, "f0": 1.0}});
    let p = write_config(&dir, "ou.json", &with(ou_spec(), grid));
    let (header, rows, summary) = parse_csv(&run_ok("density", &p, &[]));
    assert_eq!(header, ["F", "p_F"]);
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() > 0.0));
    assert!((summary_value(&summary, "total_mass") - 1.0).abs() < 1e-8);

    let grid = json!({"grid": {"min": 0.5, "max": 5.0, "points": 4}, "density": {"t": 1.0, "f0": 2.0}});
    let p = write_config(&dir, "k.json", &with(sqb_killing(), grid));
    let (_, _, summary) = parse_csv(&run_ok("density", &p, &[]));
    let mass = summary_value(&summary, "total_mass");
    assert!(mass < 0.99 && mass > 0.0, "{mass}");
    assert!((summary_value(&summary, "absorbed") - (1.0 - mass)).abs() < 1e-11);
}

#[test]
fn greens_symmetry_column() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"kind": "CIR", "nu0": 1.0, "lambda0": 1.0, "lambda1": 0.5},
        "greens": {"x0": 1.0, "s": 0.8},
        "grid": {"axis": "x", "min": 0.01, "max": 10.0, "points": 12, "spacing": "log"},
    });
    let p = write_config(&dir, "g.json", &cfg);
    let (header, rows, summary) = parse_csv(&run_ok("greens", &p, &[]));
    assert_eq!(header, ["x", "G", "symmetry_residual"]);
    assert_eq!(rows.len(), 12);
    assert!(summary_value(&summary, "symmetry_max") < 1e-12);
}

#[test]
fn single_point_grid_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = with(sqb_killing(), json!({"grid": {"min": 3.0, "max": 3.0, "points": 1}}));
    let p = write_config(&dir, "one.json", &cfg);
    let text = run_ok("volcurve", &p, &[]);
    let (_, rows, _) = parse_csv(&text);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "3");
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn calibrated_volcurves_hit_targets() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (json!({"kind": "SQB", "nu0": 1.0, "lambda0": 1.5}), 0.25),
        (json!({"kind": "CIR", "nu0": 0.3, "lambda0": 0.15, "lambda1": 0.02}), 0.20),
        (json!({"kind": "OU", "nu0": 1.0, "lambda0": 0.0, "lambda1": 0.05}), 0.20),
    ];
    for (model, target) in cases {
        let cfg = json!({
            "model": model,
            "map": {"family": "F1-", "rho": 0.002, "b": 0.004, "q1": 1.0, "c2": 1.0},
            "calibration": {"f_target": 100.0, "local_vol": target},
            "grid": {"min": 100.0, "max": 100.0, "points": 1},
        });
        let p = write_config(&dir, "v.json", &cfg);
        let (_, rows, summary) = parse_csv(&run_ok("volcurve", &p, &[]));
        assert!(summary_value(&summary, "calibration_residual") <= 1e-6);
        let loc: f64 = rows[0][2].parse().unwrap();
        assert!((loc - target).abs() < 1e-6, "{model}: {loc}");
    }
}

#[test]
fn csv_numbers_parse_back_at_twelve_digits() {
    let cfg: RunConfig = serde_json::from_value(with(sqb_killing(), json!({"grid": {"min": 0.3, "max": 40.0, "points": 25, "spacing": "log"}}))).unwrap();
    let mut buf = Vec::new();
    solvdiff_cli::run(solvdiff_cli::Command::Volcurve, &cfg, &mut buf).unwrap();
    let (_, rows, _) = parse_csv(&String::from_utf8(buf).unwrap());
    let grid = cfg.grid.unwrap().values();
    for (row, f) in rows.iter().zip(grid) {
        for field in row {
            let v: f64 = field.parse().unwrap();
            assert_eq!(&fmt_sig(v), field);
        }
        let printed: f64 = row[0].parse().unwrap();
        assert!((printed - f).abs() <= 5e-12 * f.abs());
    }
}

#[test]
fn simulate_is_reproducible_and_seed_overrides() {
    let dir = TempDir::new().unwrap();
    let sim = json!({"simulation": {"schedule": {"times": [0.25, 1.0], "f0": 2.0}, "paths": 6, "seed": 11}});
    let p = write_config(&dir, "s.json", &with(sqb_killing(), sim));
    let a = run_ok("simulate", &p, &[]);
    let b = run_ok("simulate", &p, &[]);
    assert_eq!(a, b);
    assert_eq!(a, run_ok("simulate", &p, &["--seed", "11"]));
    assert_ne!(a, run_ok("simulate", &p, &["--seed", "12"]));
    let (header, rows, _) = parse_csv(&a);
    assert_eq!(header, ["path", "time", "value"]);
    assert_eq!(rows.len(), 6 * 3);
    // Absorption is permanent along a path.
    for path in rows.chunks(3) {
        if let Some(k) = path.iter().position(|r| r[2] == "ABSORBED") {
            assert!(path[k..].iter().all(|r| r[2] == "ABSORBED"));
        }
    }
    let out = dir.path().join("paths.csv");
    run_ok("simulate", &p, &["--out", out.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), a);
}

#[test]
fn verify_subset_reports_json() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "v.json", &json!({"verify": {"suites": ["special-functions", "calibration"]}, "output": {"format": "json"}}));
    let v: Value = serde_json::from_str(&run_ok("verify", &p, &[])).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"].as_array().unwrap().len(), 2);
    assert_eq!(v["suites"][1]["criterion"], 7);
}

fn arb_model() -> impl Strategy<Value = UnderlyingModel> {
    prop_oneof![
        // lambda0 > nu0^2 / 2 keeps mu > 0.
        (0.1..3.0f64, 1.05..4.0f64).prop_map(|(n, r)| UnderlyingModel::sqb(n, 0.5 * n * n * r).unwrap()),
        (0.1..3.0f64, 1.05..4.0f64, 0.01..2.0f64).prop_map(|(n, r, k)| UnderlyingModel::cir(n, 0.5 * n * n * r, k).unwrap()),
        (0.1..3.0f64, -2.0..2.0f64, 0.01..2.0f64).prop_map(|(n, l, k)| UnderlyingModel::ou(n, l, k).unwrap()),
    ]
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        proptest::option::of(arb_model()),
        proptest::option::of((any::<bool>(), 0.01..2.0f64, -1.0..1.0f64, 0.01..1.0f64, 0.1..10.0f64)),
        proptest::option::of((any::<bool>(), 0.01..10.0f64, 1usize..500)),
        proptest::option::of((0.01..5.0f64, 1usize..1000, any::<u64>())),
        any::<bool>(),
    )
        .prop_map(|(model, map, grid, sim, json_out)| RunConfig {
            model,
            map: map.map(|(dual1, rho, a, b, c)| MapSpec::dual(if dual1 { Subfamily::I } else { Subfamily::II }, rho, a, b, c).unwrap()),
            grid: grid.map(|(log, min, points)| GridConfig {
                axis: if log { Axis::X } else { Axis::F },
                min,
                max: min * 3.0,
                points,
                spacing: if log { Spacing::Log } else { Spacing::Linear },
            }),
            simulation: sim.map(|(t, paths, seed)| SimulationConfig {
                schedule: PathSchedule::new(vec![t, 2.0 * t], 1.5).unwrap(),
                paths,
                seed,
                threads: 0,
            }),
            output: OutputConfig {
                format: if json_out { Format::Json } else { Format::Csv },
                path: None,
            },
            ..RunConfig::default()
        })
}

proptest! {
    #[test]
    fn config_round_trip(cfg in arb_config()) {
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn twelve_digit_format_round_trips(m in -1.0..1.0f64, e in -300i32..300) {
        let v = m * 10f64.powi(e);
        let s = fmt_sig(v);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - v).abs() <= 5.000001e-12 * v.abs(), "{} -> {}", v, s);
        prop_assert_eq!(fmt_sig(back), s);
    }
}
