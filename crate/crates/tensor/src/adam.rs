use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// Adam optimizer hyperparameters (learning rate is passed per step so a
/// schedule can drive it).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TensorError::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(epsilon > 0.0) {
            return Err(TensorError::Config(format!("epsilon = {epsilon} must be positive")));
        }
        Ok(Adam { beta1, beta2, epsilon })
    }

    /// One bias-corrected update of every parameter, then zeroes gradients.
    pub fn step<T: Scalar>(&self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(TensorError::Config(format!("learning rate {lr} must be positive")));
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_m_b1, one_m_b2) = (T::one() - b1, T::one() - b2);
        let eps = T::of(self.epsilon);
        let lr_t = T::of(lr);
        for p in params.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = T::of(1.0 - self.beta1.powi(t));
            let bc2 = T::of(1.0 - self.beta2.powi(t));
            let grad = p.value.grad().expect("parameter grad buffer").to_vec();
            let (m, v) = (&mut p.adam_m, &mut p.adam_v);
            for (((x, &g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_m_b1 * g;
                *vi = b2 * *vi + one_m_b2 * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x = *x - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
            p.value.zero_grad();
        }
        Ok(())
    }
}
