use crate::error::DiffError;
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Adaptive-moment optimiser with decoupled weight decay (AdamW).
///
/// Moment buffers are created lazily on the first [`OptimState::step`] and
/// must keep matching the parameter shapes afterwards.
#[derive(Clone, Debug)]
pub struct OptimState<S> {
    pub lr: S,
    pub weight_decay: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(lr: S, weight_decay: S) -> Self {
        OptimState {
            lr,
            weight_decay,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>]) -> Result<(), DiffError> {
        if params.len() != grads.len() {
            return Err(DiffError::ShapeMismatch {
                op: "optim step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "optim step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(Tensor::zeros_like).collect();
            self.second = grads.iter().map(Tensor::zeros_like).collect();
        } else if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
            return Err(DiffError::ShapeMismatch {
                op: "optim moments",
                left: self.first.iter().map(Tensor::len).collect(),
                right: grads.iter().map(Tensor::len).collect(),
            });
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let decay = S::one() - self.lr * self.weight_decay;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (S::one() - self.beta1) * gi;
                *vi = self.beta2 * *vi + (S::one() - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            if !p.is_finite() {
                return Err(DiffError::NonFinite {
                    context: "parameter after optimiser step".into(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_grad_without_decay_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.25]).unwrap();
        let before = p.clone();
        let mut opt = OptimState::new(1e-3, 0.0);
        let zero = p.zeros_like();
        for _ in 0..5 {
            opt.step(&mut [&mut p], std::slice::from_ref(&zero)).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn one_step_descends_square() {
        let mut p = w(1.0);
        let mut opt = OptimState::new(1e-3, 5e-4);
        let g = w(2.0 * p.item());
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert!(p.item() * p.item() < 1.0);
    }

    #[test]
    fn converges_to_quadratic_minimiser() {
        // f(w) = (w - 3)^2 has its minimiser at w* = 3.
        let target = 3.0;
        let mut p = w(0.0);
        let mut opt = OptimState::new(0.05, 0.0);
        for _ in 0..200 {
            let e = p.item() - target;
            let g = w(2.0 * e);
            opt.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!((p.item() - target).abs() < 1e-3, "w = {}", p.item());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = w(1.0);
        let mut opt = OptimState::new(1e-3, 0.0);
        let g = Tensor::zeros(&[2]);
        assert!(opt.step(&mut [&mut p], &[g]).is_err());
    }
}
