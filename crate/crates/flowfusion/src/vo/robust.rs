//! Cauchy robust penalty and residual scale estimation.

use super::VoError;

/// Cauchy robust penalty with inflection scale `c`.
///
/// The penalty saturates the influence of large residuals; its IRLS weight
/// is the derivative ratio `C'(r) / r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cauchy {
    c: f64,
}

impl Cauchy {
    pub fn new(c: f64) -> Result<Self, VoError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(VoError::InvalidParameter(format!(
                "cauchy scale must be positive and finite, got {c}"
            )));
        }
        Ok(Self { c })
    }

    pub fn scale(&self) -> f64 {
        self.c
    }

    /// `C(r) = (c^2 / 2) * ln(1 + (r/c)^2)`
    #[inline]
    pub fn penalty(&self, r: f64) -> f64 {
        let u = r / self.c;
        0.5 * self.c * self.c * (1.0 + u * u).ln()
    }

    /// IRLS weight `C'(r) / r = 1 / (1 + (r/c)^2)`
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        let u = r / self.c;
        1.0 / (1.0 + u * u)
    }
}

/// Lower bound keeping the scale usable when the residuals are degenerate
/// (all equal).
pub const SCALE_FLOOR: f64 = 1e-6;

/// Consistency factor turning the median absolute deviation into a standard
/// deviation estimate for Gaussian residuals.
const MAD_TO_SIGMA: f64 = 1.4826;

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// MAD-based robust scale: `c = tuning * 1.4826 * median(|r - median(r)|)`,
/// floored at [`SCALE_FLOOR`]. Requires at least `min_count` residuals.
pub fn estimate_scale(residuals: &[f64], tuning: f64, min_count: usize) -> Result<f64, VoError> {
    if residuals.len() < min_count.max(1) {
        return Err(VoError::DegenerateScale {
            count: residuals.len(),
            required: min_count.max(1),
        });
    }
    let mut work = residuals.to_vec();
    let med = median_in_place(&mut work);
    for v in &mut work {
        *v = (*v - med).abs();
    }
    let mad = median_in_place(&mut work);
    Ok((tuning * MAD_TO_SIGMA * mad).max(SCALE_FLOOR))
}
