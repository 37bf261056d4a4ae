//! Run configuration: one JSON document, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use solvdiff_core::montecarlo::{PathSchedule, DEFAULT_TABLE_TOL};
use solvdiff_core::numerics::QuadratureSpec;
use solvdiff_core::transform::MapSpec;
use solvdiff_core::underlying::UnderlyingModel;
use solvdiff_core::verify::Suite;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<UnderlyingModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greens: Option<GreensConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Grid over the mapped process F.
    #[default]
    F,
    /// Grid over the underlying X.
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub axis: Axis,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.points == 0 {
            return Err(CliError::Config("grid.points must be at least 1".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(CliError::Config(format!("grid range [{}, {}] must be finite with min <= max", self.min, self.max)));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return Err(CliError::Config("log spacing needs grid.min > 0".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        if n == 1 {
            return vec![self.min];
        }
        (0..n)
            .map(|i| {
                let w = i as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Linear => self.min + w * (self.max - self.min),
                    Spacing::Log => (self.min.ln() + w * (self.max.ln() - self.min.ln())).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Quadrature behind total masses.
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    /// Mass missed by the tabulated sampling CDF.
    #[serde(default = "default_table_tol")]
    pub sampling_table: f64,
}

fn default_table_tol() -> f64 {
    DEFAULT_TABLE_TOL
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            quadrature: QuadratureSpec::default(),
            sampling_table: DEFAULT_TABLE_TOL,
        }
    }
}

/// Rescale the map so that `sigma(F*)/F* = local_vol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub f_target: f64,
    pub local_vol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub t: f64,
    pub f0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreensConfig {
    pub x0: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub schedule: PathSchedule,
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Suites to run; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suites: Option<Vec<Suite>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub format: Format,
    /// Destination file; standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Checks every present block; the model is validated while parsing.
    pub fn validate(&self) -> CliResult<()> {
        if let Some(m) = &self.map {
            m.validate()?;
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        let q = &self.tolerance.quadrature;
        if !(q.abs_tol >= 0.0 && q.rel_tol > 0.0 && q.max_subdivisions > 0) {
            return Err(CliError::Config("tolerance.quadrature needs abs_tol >= 0, rel_tol > 0, max_subdivisions > 0".into()));
        }
        if !(self.tolerance.sampling_table > 0.0 && self.tolerance.sampling_table < 0.1) {
            return Err(CliError::Config("tolerance.sampling_table must lie in (0, 0.1)".into()));
        }
        if let Some(c) = &self.calibration {
            if !(c.f_target > 0.0 && c.f_target.is_finite() && c.local_vol > 0.0 && c.local_vol.is_finite()) {
                return Err(CliError::Config("calibration needs positive finite f_target and local_vol".into()));
            }
        }
        if let Some(d) = &self.density {
            if !(d.t > 0.0 && d.t.is_finite() && d.f0.is_finite()) {
                return Err(CliError::Config("density needs t > 0 and a finite f0".into()));
            }
        }
        if let Some(g) = &self.greens {
            if !(g.s > 0.0 && g.s.is_finite() && g.x0.is_finite()) {
                return Err(CliError::Config("greens needs s > 0 and a finite x0".into()));
            }
        }
        if let Some(s) = &self.simulation {
            s.schedule.validate()?;
            if s.paths == 0 {
                return Err(CliError::Config("simulation.paths must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn require_model(&self) -> CliResult<UnderlyingModel> {
        self.model.ok_or(CliError::MissingBlock("model"))
    }

    pub fn require_map(&self) -> CliResult<MapSpec> {
        self.map.ok_or(CliError::MissingBlock("map"))
    }

    pub fn require_grid(&self) -> CliResult<GridConfig> {
        self.grid.ok_or(CliError::MissingBlock("grid"))
    }
}
