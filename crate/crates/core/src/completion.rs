//! Probability that one change's builds finish before another's.
//!
//! Each change's outstanding builds are summarised by one normal duration
//! (the arithmetic mean of the per-build means and variances). With
//! `FT = AT + T`, the event `FT_y < FT_x` is `T_y - T_x < AT_x - AT_y`, and
//! `T_y - T_x ~ N(mu_y - mu_x, var_x + var_y)`.

use crate::error::{Error, Result};
use crate::prediction::DurationEstimate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinishTimeModel {
    pub arrival: f64,
    pub combined: DurationEstimate,
}

impl FinishTimeModel {
    pub fn new(arrival: f64, combined: DurationEstimate) -> Self {
        FinishTimeModel { arrival, combined }
    }
}

pub fn combine_estimates(builds: &[DurationEstimate]) -> Result<DurationEstimate> {
    if builds.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let n = builds.len() as f64;
    let mean = builds.iter().map(DurationEstimate::mean).sum::<f64>() / n;
    let variance = builds.iter().map(DurationEstimate::variance).sum::<f64>() / n;
    DurationEstimate::new(mean, variance)
}

/// Standardised margin by which `y` is expected to finish before `x`.
///
/// With zero total variance both finish times are point masses and the result
/// is `+inf`, `-inf` or `0` according to which one is earlier.
pub fn z_score(at_x: f64, est_x: &DurationEstimate, at_y: f64, est_y: &DurationEstimate) -> f64 {
    let margin = (at_x - at_y) - (est_y.mean() - est_x.mean());
    let var = est_x.variance() + est_y.variance();
    if var > 0.0 {
        margin / var.sqrt()
    } else if margin > 0.0 {
        f64::INFINITY
    } else if margin < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Standard normal CDF.
///
/// Rational approximation of Hart (1968, algorithm 5666) in the arrangement
/// given by West, "Better approximations to cumulative normal functions"
/// (2005); absolute error is near machine precision over the real line.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let x = z.abs();
    let tail = if x > 37.0 {
        0.0
    } else {
        let e = (-x * x / 2.0).exp();
        if x < 7.071_067_811_865_47 {
            let num = (((((0.035_262_496_599_891_1 * x + 0.700_383_064_443_688) * x + 6.373_962_203_531_65) * x
                + 33.912_866_078_383)
                * x
                + 112.079_291_497_871)
                * x
                + 221.213_596_169_931)
                * x
                + 220.206_867_912_376;
            let den = ((((((0.088_388_347_648_318_4 * x + 1.755_667_163_182_64) * x + 16.064_177_579_207)
                * x
                + 86.780_732_202_946_1)
                * x
                + 296.564_248_779_674)
                * x
                + 637.333_633_378_831)
                * x
                + 793.826_512_519_948)
                * x
                + 440.413_735_824_752;
            e * num / den
        } else {
            let mut b = x + 0.65;
            b = x + 4.0 / b;
            b = x + 3.0 / b;
            b = x + 2.0 / b;
            b = x + 1.0 / b;
            e / b / 2.506_628_274_631
        }
    };
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(FT_y < FT_x)`.
pub fn p_finishes_before(y: &FinishTimeModel, x: &FinishTimeModel) -> f64 {
    normal_cdf(z_score(x.arrival, &x.combined, y.arrival, &y.combined))
}
