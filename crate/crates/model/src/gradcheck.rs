//! Central finite-difference verification of analytic gradients.

use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences carry about
/// 1e-10 of round-off at `DEFAULT_EPS`, so coordinates whose gradients are
/// both smaller than this are in effect compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max |a − n| / max(MAGNITUDE_FLOOR, |a| + |n|) over all coordinates.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares `analytic` against `(f(x+eps·e_i) − f(x−eps·e_i)) / 2eps` for every
/// coordinate of `point`. `f` must return a scalar tensor.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&[f64]) -> Tensor,
{
    if analytic.len() != point.len() {
        return Err(TensorError::ShapeMismatch {
            op: "grad_check",
            left: vec![point.len()],
            right: vec![analytic.len()],
        });
    }
    f(point).item()?;
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: point.len(),
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x).item()?;
        x[i] = orig - eps;
        let down = f(&x).item()?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_err {
            report = GradCheckReport {
                max_rel_err: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
                coordinates: point.len(),
            };
        }
    }
    Ok(report)
}
