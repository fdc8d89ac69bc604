use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Bias-corrected Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub u: Vec<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![T::zero(); len], u: vec![T::zero(); len], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], opt: &mut OptimizerState<T>) {
    assert_eq!(params.len(), grads.len(), "gradient layout does not match parameters");
    assert_eq!(params.len(), opt.m.len(), "optimizer state layout does not match parameters");
    opt.t += 1;
    let (b1, b2) = (T::lit(opt.beta1), T::lit(opt.beta2));
    let c1 = T::one() - T::lit(opt.beta1.powi(opt.t as i32));
    let c2 = T::one() - T::lit(opt.beta2.powi(opt.t as i32));
    let (lr, eps) = (T::lit(opt.lr), T::lit(opt.eps));
    for (((p, &g), m), u) in params.iter_mut().zip(grads).zip(opt.m.iter_mut()).zip(opt.u.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *u = b2 * *u + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let u_hat = *u / c2;
        *p -= lr * m_hat / (u_hat.sqrt() + eps);
    }
}
