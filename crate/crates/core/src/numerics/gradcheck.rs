use crate::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// Returns `max_k |analytic_k - fd_k| / max(1, |fd_k|)`.
pub fn finite_diff_check<F>(mut f: F, analytic: &[f64], x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("grad[{}]", analytic.len()),
            format!("x[{}]", x.len()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be > 0, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        probe[k] = x[k] + eps;
        let plus = f(&probe);
        probe[k] = x[k] - eps;
        let minus = f(&probe);
        probe[k] = x[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective not finite around coordinate {k}: f(+)={plus}, f(-)={minus}"
            )));
        }
        let fd = (plus - minus) / (2.0 * eps);
        worst = worst.max((analytic[k] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
