//! Adam with a step-halving schedule, and per-array gradient normalization.

use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate `base`, halved once `step` reaches `decay_at` of `total`.
pub fn scheduled_lr(base: f64, step: u64, total: u64, decay_at: f64) -> f64 {
    if total > 0 && step as f64 >= decay_at * total as f64 {
        base * 0.5
    } else {
        base
    }
}

/// Divides `g` by its own L2 norm plus `1e-8`.
pub fn normalize_gradient<T: Scalar>(g: &mut Tensor<T>) {
    let norm = libm::sqrt(g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>());
    let k = T::from_f64(1.0 / (norm + 1e-8));
    for v in g.data_mut() {
        *v *= k;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    /// First and second moment estimates, one per parameter array.
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(alloc::format!(
                "optimizer tracks {} arrays, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::dim("adam", alloc::format!("array {} shape mismatch", i)));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for ((pv, gv), (mv, vv)) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                let gj = gv.as_f64();
                let mj = beta1 * mv.as_f64() + (1.0 - beta1) * gj;
                let vj = beta2 * vv.as_f64() + (1.0 - beta2) * gj * gj;
                *mv = T::from_f64(mj);
                *vv = T::from_f64(vj);
                *pv -= T::from_f64(lr * (mj / bc1) / (libm::sqrt(vj / bc2) + eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = Tensor::from_vec(Shape::new(1, 1, 1, 3), alloc::vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::from_vec(Shape::new(1, 1, 1, 3), alloc::vec![3.0, -0.1, 0.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[g], 0.01).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-8);
        assert!((p.data()[1] + 1.99).abs() < 1e-6);
        assert_eq!(p.data()[2], 0.5);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Tensor::full(Shape::new(1, 1, 1, 2), 3.0f64);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..2000 {
            let g = p.map(|v| 2.0 * (v - 1.0));
            adam.step(&mut [&mut p], &[g], 0.01).unwrap();
        }
        assert!(p.data().iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn schedule_halves_once() {
        assert_eq!(scheduled_lr(1e-3, 0, 300, 0.67), 1e-3);
        assert_eq!(scheduled_lr(1e-3, 200, 300, 0.67), 1e-3);
        assert_eq!(scheduled_lr(1e-3, 201, 300, 0.67), 5e-4);
        assert_eq!(scheduled_lr(1e-3, 299, 300, 0.67), 5e-4);
    }

    #[test]
    fn normalized_gradient_has_unit_norm() {
        let mut g = Tensor::from_vec(Shape::new(1, 1, 1, 2), alloc::vec![3.0f64, 4.0]).unwrap();
        normalize_gradient(&mut g);
        assert!((g.data()[0] - 0.6).abs() < 1e-8);
        let mut z = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 2));
        normalize_gradient(&mut z);
        assert_eq!(z.data(), &[0.0, 0.0]);
    }
}
