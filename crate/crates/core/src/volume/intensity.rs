use super::{BrainMask, Volume};
use crate::error::{Error, Result};
use crate::tissue::fit_gmm3;

/// Percentile used to map in-mask intensities onto [0, 1].
pub const UNIT_SCALE_PERCENTILE: f64 = 99.9;

/// White-matter mean after standardization.
pub const WM_TARGET_MEAN: f64 = 0.8;

/// Nearest-rank percentile: the `ceil(q/100 * n)`-th smallest value.
///
/// Reorders `values` in place. Panics on an empty slice.
pub fn percentile_nearest_rank(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let n = values.len();
    // tolerance keeps e.g. 99.9% of 1000 at rank 999 despite rounding
    let exact = q / 100.0 * n as f64;
    let rank = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    let idx = rank.clamp(1, n) - 1;
    *values.select_nth_unstable_by(idx, f64::total_cmp).1
}

/// Divide by the 99.9th in-mask percentile and clamp to [0, 1].
pub fn scale_unit(v: &Volume, mask: &BrainMask) -> Result<Volume> {
    mask.require_nonempty()?;
    let mut inside = mask.select(v)?;
    let p = percentile_nearest_rank(&mut inside, UNIT_SCALE_PERCENTILE);
    if !(p > 0.0) {
        return Err(Error::DegenerateIntensity(format!(
            "99.9th in-mask percentile is {p}; cannot scale to [0, 1]"
        )));
    }
    let data = v.data().iter().map(|&x| (x / p).clamp(0.0, 1.0)).collect();
    v.with_data(data, v.intent())
}

/// Scale a T1-weighted image so its white-matter mean becomes 0.8.
///
/// The white-matter mean is the brightest component of a three-class mixture
/// fitted to the positive in-mask intensities.
pub fn standardize_wm(v: &Volume, mask: &BrainMask) -> Result<Volume> {
    let samples: Vec<f64> = mask.select(v)?.into_iter().filter(|&x| x > 0.0).collect();
    let fit = fit_gmm3(&samples).map_err(|e| Error::Estimation(format!("white-matter mean: {e}")))?;
    let wm = fit.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let factor = WM_TARGET_MEAN / wm;
    let data = v.data().iter().map(|&x| x * factor).collect();
    v.with_data(data, v.intent())
}
