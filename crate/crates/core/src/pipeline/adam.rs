use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam over one parameter set. Moments are kept per
/// parameter in set order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Adam { lr, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must hold a gradient for every parameter,
    /// in set order.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: Vec<(String, Option<Vec<T>>)>) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!("adam: {} gradients for {} parameters", grads.len(), params.len())));
        }
        let mut checked = Vec::with_capacity(grads.len());
        for ((name, grad), (pname, p)) in grads.into_iter().zip(params.iter()) {
            if name != pname {
                return Err(Error::contract(format!("adam: gradient {name} does not match parameter {pname}")));
            }
            let grad = grad.ok_or(Error::MissingGradient(name))?;
            if grad.len() != p.len() {
                return Err(Error::contract(format!("adam: gradient of {pname} has {} elements", grad.len())));
            }
            checked.push(grad);
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of_f64(BETA1);
        let b2 = T::of_f64(BETA2);
        let one = T::one();
        let c1 = T::of_f64(1.0 - BETA1.powi(t));
        let c2 = T::of_f64(1.0 - BETA2.powi(t));
        let lr = T::of_f64(self.lr);
        let eps = T::of_f64(EPSILON);
        for (((_, p), grad), (m, v)) in params.iter_mut().zip(&checked).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
