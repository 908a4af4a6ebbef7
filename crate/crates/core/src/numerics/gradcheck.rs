use super::Tensor;
use crate::{Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// Returns the maximum over all coordinates of
/// `|fd − analytic| / max(1e-8, |fd| + |analytic|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[Tensor], analytic: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::param("eps", format!("{eps} outside [1e-7, 1e-3]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim("grad_check", &[params.len()], &[analytic.len()]));
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape() != a.shape() {
            return Err(Error::dim("grad_check", p.shape(), a.shape()));
        }
    }
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for t in 0..work.len() {
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = loss_fn(&work);
            work[t].data_mut()[i] = orig - eps;
            let minus = loss_fn(&work);
            work[t].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite loss while perturbing tensor {t} coordinate {i}"
                )));
            }
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[t].data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
