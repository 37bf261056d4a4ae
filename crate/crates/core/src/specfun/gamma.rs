//! Gamma function family: `ln Γ`, signed and reciprocal Gamma, digamma and
//! the auxiliary Gamma combinations used by the Temme Bessel series.

use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::logvalue::LogValue;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `zeta(k) - 1` for `k = 2, 3, ...`.
const ZETA_M1: [f64; 34] = [
    6.449_340_668_482_264e-1,
    2.020_569_031_595_943e-1,
    8.232_323_371_113_819e-2,
    3.692_775_514_336_993e-2,
    1.734_306_198_444_914e-2,
    8.349_277_381_922_827e-3,
    4.077_356_197_944_34e-3,
    2.008_392_826_082_214e-3,
    9.945_751_278_180_853e-4,
    4.941_886_041_194_645e-4,
    2.460_865_533_080_483e-4,
    1.227_133_475_784_891_5e-4,
    6.124_813_505_870_483e-5,
    3.058_823_630_702_049e-5,
    1.528_225_940_865_187e-5,
    7.637_197_637_899_763e-6,
    3.817_293_264_999_84e-6,
    1.908_212_716_553_939e-6,
    9.539_620_338_727_962e-7,
    4.769_329_867_878_064e-7,
    2.384_505_027_277_33e-7,
    1.192_199_259_653_110_6e-7,
    5.960_818_905_125_948e-8,
    2.980_350_351_465_228e-8,
    1.490_155_482_836_504_3e-8,
    7.450_711_789_835_43e-9,
    3.725_334_024_788_457e-9,
    1.862_659_723_513_049_2e-9,
    9.313_274_324_196_682e-10,
    4.656_629_065_033_784e-10,
    2.328_311_833_676_505_3e-10,
    1.164_155_017_270_051_9e-10,
    5.820_772_087_902_701e-11,
    2.910_385_044_497_1e-11,
];

/// Taylor coefficients of `1/Γ(1+x) = Σ c_j x^j`.
const RGAMMA1P: [f64; 29] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_9,
    -0.042_002_635_034_095_24,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_34,
    -0.009_621_971_527_876_973,
    0.007_218_943_246_663_1,
    -0.001_165_167_591_859_065,
    -0.000_215_241_674_114_950_97,
    0.000_128_050_282_388_116_2,
    -2.013_485_478_078_824e-5,
    -1.250_493_482_142_670_7e-6,
    1.133_027_231_981_696e-6,
    -2.056_338_416_977_607e-7,
    6.116_095_104_481_416e-9,
    5.002_007_644_469_223e-9,
    -1.181_274_570_487_020_1e-9,
    1.043_426_711_691_100_5e-10,
    7.782_263_439_905_071e-12,
    -3.696_805_618_642_206e-12,
    5.100_370_287_454_476e-13,
    -2.058_326_053_566_507e-14,
    -5.348_122_539_423_018e-15,
    1.226_778_628_238_260_8e-15,
    -1.181_259_301_697_458_8e-16,
    1.186_692_254_751_600_3e-18,
    1.412_380_655_318_031_8e-18,
    -2.298_745_684_435_370_3e-19,
];

/// Bernoulli-number coefficients `B_{2k} / (2k (2k-1))` of the Stirling series.
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// `ln Γ(2 + z)` for `|z| <= 0.5`.
fn ln_gamma_2p(z: f64) -> f64 {
    let mut sum = 0.0;
    // zk = (-1)^k z^k
    let mut zk = -z;
    for (i, &c) in ZETA_M1.iter().enumerate() {
        let k = (i + 2) as f64;
        zk *= -z;
        let term = c * zk / k;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    (1.0 - EULER_GAMMA) * z + sum
}

fn ln_gamma_stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv;
    for &c in &STIRLING {
        series += c * p;
        p *= inv2;
    }
    (x - 0.5) * x.ln() - x + LN_SQRT_2PI + series
}

/// `ln Γ(x)` for `x > 0` without argument checks.
pub(crate) fn ln_gamma_pos(x: f64) -> f64 {
    if x >= 10.0 {
        return ln_gamma_stirling(x);
    }
    if x < 0.5 {
        // Γ(x) = Γ(x + 1) / x; x + 1 lies in [1, 1.5).
        return ln_gamma_pos(x + 1.0) - x.ln();
    }
    if x < 1.5 {
        // Γ(x) = Γ(x + 1) / x with x + 1 in [1.5, 2.5).
        return ln_gamma_2p(x - 1.0) - (x - 1.0).ln_1p();
    }
    if x < 2.5 {
        return ln_gamma_2p(x - 2.0);
    }
    let mut y = x;
    let mut prod = 1.0;
    while y >= 2.5 {
        y -= 1.0;
        prod *= y;
    }
    ln_gamma_2p(y - 2.0) + prod.ln()
}

/// Natural logarithm of the Gamma function for positive arguments.
pub fn gamma_ln(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain("gamma_ln", format!("argument must be positive and finite, got {x}")));
    }
    Ok(ln_gamma_pos(x))
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

/// Γ(x) for any real `x` that is not a pole, as a signed log value.
pub fn gamma(x: f64) -> Result<LogValue> {
    if !x.is_finite() || is_nonpositive_integer(x) {
        return Err(domain("gamma", format!("pole or non-finite argument {x}")));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> LogValue {
    if x > 0.0 {
        return LogValue::from_ln(ln_gamma_pos(x));
    }
    // Reflection: Γ(x) Γ(1 - x) = π / sin(π x).
    let s = sin_pi(x);
    LogValue::from_f64(PI / s) / LogValue::from_ln(ln_gamma_pos(1.0 - x))
}

/// `sin(π x)` with exact zeros at the integers.
fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).floor(); // r in [0, 2)
    if r == 0.0 || r == 1.0 {
        return 0.0;
    }
    if r < 0.5 {
        (PI * r).sin()
    } else if r < 1.5 {
        (PI * (1.0 - r)).sin()
    } else {
        (PI * (r - 2.0)).sin()
    }
}

/// `1/Γ(x)`; exactly zero at the poles of Γ.
pub fn rgamma(x: f64) -> LogValue {
    if is_nonpositive_integer(x) {
        LogValue::ZERO
    } else {
        gamma_unchecked(x).recip()
    }
}

/// The digamma function ψ(x) for any real non-pole `x`.
pub fn digamma(x: f64) -> Result<f64> {
    if !x.is_finite() || is_nonpositive_integer(x) {
        return Err(domain("digamma", format!("pole or non-finite argument {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    if x < 0.0 {
        // ψ(1 - x) - ψ(x) = π cot(π x).
        let s = sin_pi(x);
        let c = sin_pi(x + 0.5);
        acc -= PI * c / s;
        x = 1.0 - x;
    }
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Asymptotic series with B_{2k} / (2k).
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    Ok(acc + x.ln() - 0.5 / x - series)
}

/// Auxiliary Gamma combinations for `|x| <= 1/2`:
/// `gam1 = (1/Γ(1-x) - 1/Γ(1+x)) / (2x)`, `gam2 = (1/Γ(1-x) + 1/Γ(1+x)) / 2`,
/// `gampl = 1/Γ(1+x)`, `gammi = 1/Γ(1-x)`.
pub(crate) fn temme_gammas(x: f64) -> (f64, f64, f64, f64) {
    let x2 = x * x;
    let mut even = 0.0;
    let mut odd = 0.0;
    let mut p = 1.0;
    for j in (0..RGAMMA1P.len()).step_by(2) {
        even += RGAMMA1P[j] * p;
        if j + 1 < RGAMMA1P.len() {
            odd += RGAMMA1P[j + 1] * p;
        }
        p *= x2;
    }
    let gam1 = -odd;
    let gam2 = even;
    (gam1, gam2, gam2 - x * gam1, gam2 + x * gam1)
}

/// Pochhammer symbol `(a)_n` as a signed log value.
pub fn pochhammer(a: f64, n: usize) -> LogValue {
    let mut out = LogValue::ONE;
    for k in 0..n {
        out = out * LogValue::from_f64(a + k as f64);
    }
    out
}
