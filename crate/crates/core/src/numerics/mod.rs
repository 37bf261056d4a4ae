//! Quadrature, root finding, tabulated CDFs and endpoint-limit probes.

pub mod cdf;
pub mod limits;
pub mod quad;
pub mod root;

pub use cdf::{build_cdf_table, invert_cdf, CdfDraw, CdfTable, Support};
pub use limits::{geometric_grid, sequence_trend, tends_to_zero, LimitTrend};
pub use quad::{integrate, integrate_with_points, QuadResult, QuadratureSpec, Transform};
pub use root::{expand_bracket, find_root, RootSpec};
