//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree enough to indicate a kink
    /// (relu, absolute value) inside the perturbation window.
    pub skipped: usize,
}

/// Compares the analytic gradient returned by `loss` against central
/// differences for every parameter and returns the largest relative error.
///
/// `loss` returns `(value, gradient)`; the gradient must share the layout
/// of `params`.
pub fn grad_check<P, F>(loss: F, params: &P, eps: f64) -> Result<f64>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<(f64, P)>,
{
    grad_check_report(loss, params, eps).map(|r| r.max_rel_error)
}

pub fn grad_check_report<P, F>(loss: F, params: &P, eps: f64) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<(f64, P)>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let (f0, grad) = loss(params)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..params.num_params() {
        let orig = params.get_flat(i);
        probe.set_flat(i, orig + eps);
        let fp = loss(&probe)?.0;
        probe.set_flat(i, orig - eps);
        let fm = loss(&probe)?.0;
        probe.set_flat(i, orig);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("loss at perturbed point".into()));
        }
        let analytic = grad.get_flat(i);
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12);
        let forward = (fp - f0) / eps;
        let backward = (f0 - fm) / eps;
        let spread = (forward - backward).abs();
        if rel > 1e-6 && spread > 1e-3 * (forward.abs() + backward.abs()).max(1e-9) && (analytic - numeric).abs() <= spread {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
        }
    }
    Ok(report)
}
