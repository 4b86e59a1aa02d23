//! Adam optimizer with bias correction.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Optimizer state shared across a parameter list. Moment tensors are
/// allocated to match parameter shapes on the first step.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step_count: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Defaults follow the usual values: beta1 = 0.9, beta2 = 0.999,
    /// eps = 1e-8.
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr: T::of_f64(lr),
            beta1: T::of_f64(0.9),
            beta2: T::of_f64(0.999),
            eps: T::of_f64(1e-8),
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one bias-corrected Adam update to every parameter in place.
    /// `grads` must align with `params` element for element.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape_mismatch(
                "adam parameter/gradient lists",
                &params.len(),
                &grads.len(),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape_mismatch(
                "adam state length",
                &self.m.len(),
                &params.len(),
            ));
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.m.iter().zip(self.v.iter()))
        {
            if p.shape() != g.shape() {
                return Err(Error::shape_mismatch("adam update", p.shape(), g.shape()));
            }
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::shape_mismatch(
                    "adam moment shape",
                    m.shape(),
                    p.shape(),
                ));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = self.beta1 * md[i] + (one - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (one - self.beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] = pd[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::<f64>::filled(vec![3], 1.5);
        let orig = p.clone();
        let g = Tensor::<f64>::zeros(vec![3]);
        let mut adam = AdamState::new(0.001);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, orig);
        assert_eq!(adam.step_count, 1);
    }

    /// Hand evaluation of the bias-corrected formula: with g = 1 at step 1,
    /// m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
    #[test]
    fn first_step_magnitude_matches_hand_evaluation() {
        let mut p = Tensor::<f64>::zeros(vec![4]);
        let g = Tensor::<f64>::filled(vec![4], 1.0);
        let mut adam = AdamState::new(0.001);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        let expect = -0.001 / (1.0 + 1e-8);
        for &v in p.data() {
            assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
        }
    }

    /// m_hat / sqrt(v_hat) is invariant to gradient scale at step 1.
    #[test]
    fn first_step_is_scale_invariant() {
        let run = |scale: f64| {
            let mut p = Tensor::<f64>::zeros(vec![1]);
            let g = Tensor::<f64>::filled(vec![1], scale);
            let mut adam = AdamState::new(0.001);
            adam.step(&mut [&mut p], &[&g]).unwrap();
            p.data()[0]
        };
        let small = run(1.0);
        let big = run(1000.0);
        assert!((small.abs() - 0.001).abs() < 1e-9);
        assert!((big.abs() - 0.001).abs() < 1e-9);
        assert!((small - big).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::<f64>::zeros(vec![3]);
        let g = Tensor::<f64>::zeros(vec![4]);
        let mut adam = AdamState::new(0.001);
        assert!(adam.step(&mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn step_count_increments_once_per_call() {
        let mut p = Tensor::<f64>::zeros(vec![2]);
        let g = Tensor::<f64>::filled(vec![2], 0.5);
        let mut adam = AdamState::new(0.001);
        for expect in 1..=5 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
            assert_eq!(adam.step_count, expect);
        }
    }
}
