//! Finite-difference verification of analytic gradients.

use crate::scalar::{real, Real};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`.
pub fn numeric_grad<R, F>(mut f: F, x: &Tensor<R>, eps: R) -> Tensor<R>
where
    R: Real,
    F: FnMut(&Tensor<R>) -> R,
{
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (real::<R>(2.0) * eps);
    }
    grad
}

/// Relative error between an analytic and a numeric derivative entry:
/// |a - n| / max(1e-8, |a| + |n|).
pub fn rel_err<R: Real>(analytic: R, numeric: R) -> R {
    let denom = real::<R>(1e-8).max(analytic.abs() + numeric.abs());
    (analytic - numeric).abs() / denom
}

/// Max relative error between `analytic` and the central-difference gradient
/// of `f` at `x`.
pub fn grad_check<R, F>(f: F, x: &Tensor<R>, analytic: &Tensor<R>, eps: R) -> R
where
    R: Real,
    F: FnMut(&Tensor<R>) -> R,
{
    assert_eq!(
        analytic.shape(),
        x.shape(),
        "analytic gradient must match the input shape"
    );
    let numeric = numeric_grad(f, x, eps);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(R::zero(), R::max)
}
