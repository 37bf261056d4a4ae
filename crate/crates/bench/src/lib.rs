//! Fixtures shared by the criterion benches.

use solvdiff_core::transform::{FDiffusion, MapSpec, Subfamily};
use solvdiff_core::underlying::UnderlyingModel;

/// One model per family: SQB (mu = 1.5), CIR (mu = 1) and OU.
pub fn models() -> Vec<(&'static str, UnderlyingModel)> {
    vec![
        ("sqb", UnderlyingModel::sqb(1.0, 1.25).expect("valid SQB")),
        ("cir", UnderlyingModel::cir(1.0, 1.0, 0.5).expect("valid CIR")),
        ("ou", UnderlyingModel::ou(0.9, 0.3, 0.7).expect("valid OU")),
    ]
}

/// Subfamily I maps on each model.
pub fn maps() -> Vec<(&'static str, FDiffusion)> {
    let spec = MapSpec::dual(Subfamily::I, 0.8, 0.0, 0.4, 1.0).expect("valid spec");
    models().into_iter().map(|(name, m)| (name, FDiffusion::new(m, spec).expect("certified map"))).collect()
}

/// An interior point of the model's state space.
pub fn interior_point(m: &UnderlyingModel) -> f64 {
    match m.state_space().0 {
        lo if lo.is_finite() => 1.3,
        _ => m.shift() + 0.4,
    }
}
