//! Central finite differences for checking analytic gradients.
//!
//! These only ever evaluate the forward function, so they stay independent
//! of the tape's backward pass.

use crate::grad::tensor::Tensor;

/// Numerical gradient of `f` at `at`: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F>(mut f: F, at: &Tensor, step: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = at.clone();
    let mut out = Tensor::zeros(at.rows(), at.cols());
    for i in 0..at.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `max |a - n| / max(max |a|, max |n|)`, with a tiny floor so that two
/// all-zero gradients compare as equal.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let scale = analytic.data().iter().chain(numeric.data()).fold(0.0f64, |m, v| m.max(v.abs()));
    analytic.max_abs_diff(numeric) / scale.max(1e-12)
}
