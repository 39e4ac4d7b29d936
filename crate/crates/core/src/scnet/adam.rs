use super::net::{Gradients, ScNetParams};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ScNetParams<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .zip(params.roles())
            .map(|(t, r)| vec![T::zero(); if r.trainable() { t.len() } else { 0 }])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ScNetParams<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.tensors.len() != self.m.len()
            || grads.tensors.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::shape("gradients do not match optimiser state"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if g.is_empty() {
                continue;
            }
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scnet::{ScNetParams, Topology};

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut params = ScNetParams::<f64>::init(Topology { levels: 2, base_width: 2 }, 1).unwrap();
        let before = params.trainable_flat();
        let mut grads = Gradients::zeros_for(&params);
        for (k, t) in grads.tensors.iter_mut().enumerate() {
            for (i, g) in t.iter_mut().enumerate() {
                *g = if (i + k) % 2 == 0 { 0.3 } else { -2.0 };
            }
        }
        let mut adam = Adam::new(&params, 0.01);
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(adam.steps_taken(), 1);
        let after = params.trainable_flat();
        let flat_g: Vec<f64> = grads.tensors.concat();
        for ((b, a), g) in before.iter().zip(&after).zip(&flat_g) {
            assert!((b - a - 0.01 * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut params = ScNetParams::<f64>::init(Topology { levels: 2, base_width: 2 }, 1).unwrap();
        let mut adam = Adam::new(&params, 0.01);
        let grads = Gradients { tensors: vec![vec![0.0; 3]] };
        assert!(adam.step(&mut params, &grads).is_err());
    }
}
