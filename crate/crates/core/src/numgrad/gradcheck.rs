//! Central finite-difference verification of tape gradients.
//!
//! The checker is the ground truth the rest of the crate is audited
//! against: any differentiable computation can be handed over as a closure
//! that maps parameter values to a scalar loss, and every coordinate of the
//! analytic gradient is compared against a symmetric difference quotient.

use super::tensor::Tensor;
use super::NumGradError;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate, analytic, numeric) of the worst
    /// disagreement, if any coordinate was checked.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Compare `analytic` gradients against central differences of `f`.
///
/// `f` is called with a full copy of the parameter set in which exactly one
/// coordinate has been nudged by ±`step`. A `None` entry in `analytic` is
/// treated as an all-zero gradient (a parameter the loss never touched).
/// Relative error uses an absolute floor so near-zero coordinates compare
/// absolutely instead of blowing up the ratio.
pub fn check_gradients<F>(
    params: &[Tensor],
    analytic: &[Option<&Tensor>],
    step: f64,
    mut f: F,
) -> Result<GradCheckReport, NumGradError>
where
    F: FnMut(&[Tensor]) -> Result<f64, NumGradError>,
{
    if params.len() != analytic.len() {
        return Err(NumGradError::ShapeMismatch {
            op: "gradient check".into(),
            shapes: format!("{} params vs {} gradients", params.len(), analytic.len()),
        });
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (pi, param) in params.iter().enumerate() {
        if let Some(g) = analytic[pi] {
            if g.shape() != param.shape() {
                return Err(NumGradError::ShapeMismatch {
                    op: "gradient check".into(),
                    shapes: format!("{:?} param vs {:?} grad", param.shape(), g.shape()),
                });
            }
        }
        for k in 0..param.numel() {
            let x0 = param.data()[k];
            work[pi].data_mut()[k] = x0 + step;
            let up = f(&work)?;
            work[pi].data_mut()[k] = x0 - step;
            let down = f(&work)?;
            work[pi].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].map_or(0.0, |g| g.data()[k]);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(NumGradError::NonFinite("gradient check".into()));
            }
            let scale = a.abs().max(numeric.abs()).max(DEFAULT_ABS_FLOOR);
            let rel = (a - numeric).abs() / scale;
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, k, a, numeric));
            }
        }
    }
    Ok(report)
}
