//! Adam with per-group learning rate and epsilon.

use serde::{Deserialize, Serialize};

use crate::field::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct Adam<R> {
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
    t: i32,
}

impl<R: Real> Adam<R> {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![R::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![R::zero(); n]).collect(),
            t: 0,
        }
    }

    /// One update. `hyper[k]` applies to parameter group `k`.
    pub fn step(&mut self, params: Vec<&mut [R]>, grads: Vec<&[R]>, hyper: &[AdamParams]) {
        self.t += 1;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let h = hyper[k];
            let (b1, b2) = (R::from_f64(h.beta1), R::from_f64(h.beta2));
            let c1 = 1.0 - h.beta1.powi(self.t);
            let c2 = 1.0 - h.beta2.powi(self.t);
            let step = R::from_f64(h.lr / c1);
            let c2 = R::from_f64(c2);
            let eps = R::from_f64(h.eps);
            let one = R::one();
            for ((x, &gi), (m, v)) in p.iter_mut().zip(g).zip(self.m[k].iter_mut().zip(self.v[k].iter_mut())) {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                *x -= step * *m / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
