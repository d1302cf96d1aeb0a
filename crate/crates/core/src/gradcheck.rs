//! Central finite differences and the error measure used to compare them
//! against analytic gradients.

/// Central-difference gradient of `f` at `point`.
pub fn central_difference<F>(mut f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + eps;
            let plus = f(&x);
            x[i] = point[i] - eps;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Tolerances for an analytic-vs-numeric comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute_floor: f64,
}

impl Tolerance {
    pub const fn new(relative: f64, absolute_floor: f64) -> Self {
        Self {
            relative,
            absolute_floor,
        }
    }

    /// `|a - n| / max(|a|, |n|, floor / relative)`. A pair passes when this
    /// is at most `relative`, i.e. when
    /// `|a - n| <= max(relative * max(|a|, |n|), floor)`.
    pub fn scaled_error(&self, analytic: f64, numeric: f64) -> f64 {
        let denom = analytic
            .abs()
            .max(numeric.abs())
            .max(self.absolute_floor / self.relative);
        (analytic - numeric).abs() / denom
    }

    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        self.scaled_error(analytic, numeric) <= self.relative
    }
}

/// Largest scaled error over paired entries.
pub fn max_scaled_error(tol: Tolerance, analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| tol.scaled_error(a, n))
        .fold(0.0, f64::max)
}
