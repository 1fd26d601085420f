//! Piecewise-constant merge operator mapping several reconstructions of a
//! quantized coefficient to one common target value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step `w_step` and shift `shift`, with `shift` kept in `[0, w_step)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwcParams {
    pub w_step: u64,
    pub shift: f64,
}

impl PwcParams {
    pub fn new(w_step: u64, shift: f64) -> Result<Self> {
        if w_step == 0 || !shift.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invalid merge params W = {w_step}, c = {shift}"
            )));
        }
        Ok(PwcParams {
            w_step,
            shift: shift.rem_euclid(w_step as f64),
        })
    }

    /// Parameters whose bin of width `w_step` is centered on `target`.
    pub fn centered(w_step: u64, target: i64) -> Result<Self> {
        PwcParams::new(w_step, w_step as f64 / 2.0 - target as f64)
    }
}

/// `floor((x + c) / W) * W + W / 2 - c`.
pub fn pwc_eval(params: PwcParams, x: i64) -> f64 {
    let w = params.w_step as f64;
    ((x as f64 + params.shift) / w).floor() * w + w / 2.0 - params.shift
}

/// Smallest step whose target-centered bin `[target - W/2, target + W/2)`
/// holds every value.
pub fn select_merge_params(values: &[i64], target: i64) -> Result<PwcParams> {
    let (Some(&lo), Some(&hi)) = (values.iter().min(), values.iter().max()) else {
        return Err(Error::InvalidParameter(
            "merge needs at least one value".into(),
        ));
    };
    let above = if hi >= target {
        2 * (hi - target) as u64 + 1
    } else {
        1
    };
    let below = if lo < target {
        2 * (target - lo) as u64
    } else {
        1
    };
    PwcParams::centered(above.max(below), target)
}

/// Bits charged per coefficient on top of the step index.
pub const SIDE_INFO_BITS_PER_COEFF: f64 = 1.0;

/// Coarse side-information size: `ceil(log2 W)` plus a constant per
/// coefficient.
pub fn merge_side_info_size(block: &[(Vec<i64>, i64)]) -> Result<f64> {
    block.iter().try_fold(0.0, |acc, (values, target)| {
        let p = select_merge_params(values, *target)?;
        Ok(acc + (p.w_step as f64).log2().ceil() + SIDE_INFO_BITS_PER_COEFF)
    })
}

/// Whether `params` maps every value and the target onto the target.
pub fn merges_to(params: PwcParams, values: &[i64], target: i64) -> bool {
    let t = target as f64;
    pwc_eval(params, target) == t && values.iter().all(|&v| pwc_eval(params, v) == t)
}
