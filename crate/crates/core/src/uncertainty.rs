//! Confidence bounds on the integrated cost under a white-noise regression
//! model: the fitted instantaneous cost is off by centered Gaussian noise, so
//! the integrated true cost is Gaussian around the predicted one with
//! variance `T sigma^2`.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum UncertaintyError {
    #[error("residual standard deviation must be non-negative, got {0}")]
    NegativeSigma(f64),

    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),

    #[error("confidence level must lie strictly inside (0, 1), got {0}")]
    InvalidConfidence(f64),
}

/// Noise model for the integrated cost: residual standard deviation of the
/// instantaneous model and the integration horizon.
#[derive(Clone, Copy, Debug)]
pub struct CostNoiseModel {
    residual_std: f64,
    horizon: f64,
}

impl CostNoiseModel {
    pub fn new(residual_std: f64, horizon: f64) -> Result<Self, UncertaintyError> {
        if residual_std < 0.0 || !residual_std.is_finite() {
            return Err(UncertaintyError::NegativeSigma(residual_std));
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(UncertaintyError::InvalidHorizon(horizon));
        }
        Ok(Self {
            residual_std,
            horizon,
        })
    }

    pub fn residual_std(&self) -> f64 {
        self.residual_std
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Standard deviation of the integrated noise: `sqrt(T) sigma`.
    pub fn integrated_std(&self) -> f64 {
        self.horizon.sqrt() * self.residual_std
    }
}

/// Two-sided confidence interval `value +- z * sqrt(T) * sigma` at the given
/// confidence level `1 - u`.
pub fn confidence_interval(
    value: f64,
    model: &CostNoiseModel,
    confidence: f64,
) -> Result<(f64, f64), UncertaintyError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(UncertaintyError::InvalidConfidence(confidence));
    }
    let u = 1.0 - confidence;
    let quantile = standard_normal_quantile(1.0 - u / 2.0);
    let half_width = quantile * model.integrated_std();
    Ok((value - half_width, value + half_width))
}

/// Standard normal quantile (inverse CDF) via the Wichura AS 241 rational
/// approximation, accurate to well below 1e-9 over (0, 1). Coefficients keep
/// their published precision.
#[allow(clippy::excessive_precision)]
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile defined on (0, 1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * rational(r, &CENTRAL_NUM, &CENTRAL_DEN);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        rational(r - 1.6, &TAIL_NUM, &TAIL_DEN)
    } else {
        rational(r - 5.0, &FAR_TAIL_NUM, &FAR_TAIL_DEN)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

fn rational(x: f64, numerator: &[f64; 8], denominator: &[f64; 8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in (0..8).rev() {
        num = num * x + numerator[i];
        den = den * x + denominator[i];
    }
    num / den
}

#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_5,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946_1e4,
    4.592_195_393_154_987_1e4,
    6.726_577_092_700_870_1e4,
    3.343_057_558_358_812_8e4,
    2.509_080_928_730_122_7e3,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_1e1,
    6.871_870_074_920_579_1e2,
    5.394_196_021_424_751_1e3,
    2.121_379_430_158_659_6e4,
    3.930_789_580_009_271_1e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_545_6e3,
];
#[allow(clippy::excessive_precision)]
const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
#[allow(clippy::excessive_precision)]
const TAIL_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_DEN: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];
