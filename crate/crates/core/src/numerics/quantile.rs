//! Lower nearest-rank quantiles.
//!
//! One convention is used everywhere a quantile appears (anomaly label
//! bands, detection thresholds): sort ascending and take the value at index
//! `ceil(q * n) - 1`, clamped to the valid range. No interpolation, so the
//! result is always an observed value and the computation is deterministic.

use super::NumericsError;

/// Lower nearest-rank quantile of `values` at level `q` in `[0, 1]`.
///
/// NaN values are not meaningful inputs here; they sort last.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::EmptyInput { what: "quantile values" });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(NumericsError::OutOfRange { what: "quantile level", value: q });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_of_sorted(&sorted, q))
}

/// Same convention over an already ascending-sorted slice.
///
/// # Panics
/// Panics if `sorted` is empty.
pub fn quantile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as isize - 1;
    let idx = rank.clamp(0, n as isize - 1) as usize;
    sorted[idx]
}
