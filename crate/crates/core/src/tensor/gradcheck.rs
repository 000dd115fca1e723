use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares an analytic gradient against central finite differences of a
/// scalar-valued function, coordinate by coordinate. Returns the maximum
/// relative error max |a-n| / max(|a|, |n|, 1e-8).
pub fn grad_check(
    mut f: impl FnMut(&Tensor) -> f64,
    value: &Tensor,
    analytic: &Tensor,
    eps: f64,
) -> Result<f64> {
    assert!(
        (1e-7..=1e-3).contains(&eps),
        "eps {} outside [1e-7, 1e-3]",
        eps
    );
    assert_eq!(value.dims(), analytic.dims());
    let mut probe = value.clone();
    let mut max_rel = 0.0_f64;
    for i in 0..value.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
