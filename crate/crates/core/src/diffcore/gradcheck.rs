//! Central finite differences, used as the oracle for reverse-mode gradients.

use crate::scalar::Scalar;

use super::tensor::Tensor;

/// `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_difference_grad<S, F>(mut f: F, x: &Tensor<S>, h: S) -> Tensor<S>
where
    S: Scalar,
    F: FnMut(&Tensor<S>) -> S,
{
    assert!(h > S::zero(), "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (h + h));
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// `‖a - b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`.
///
/// The floor keeps the measure meaningful when both gradients are ~0.
pub fn relative_error<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, floor: S) -> S {
    assert_eq!(a.shape(), b.shape());
    let inf = |t: &Tensor<S>| t.data().iter().fold(S::zero(), |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / inf(a).max(inf(b)).max(floor)
}
