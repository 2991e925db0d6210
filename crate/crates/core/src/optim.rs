use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon.is_finite()
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adam moments for every tensor of one [`ParamStore`], in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Self { config, m: zeros(), v: zeros(), step: 0 }
    }

    /// Applies one bias-corrected update from the gradients accumulated in
    /// `store`. Non-finite gradients leave everything untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if store.grad(id).shape() != self.m[id.index()].shape() {
                return Err(Error::shape(format!("moment shape mismatch for {}", store.name(id))));
            }
            if !store.grad(id).all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let t = self.step + 1;
        let bc1 = 1.0 - beta1.powi(t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(t.min(i32::MAX as u64) as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let grad = store.grad(id).clone();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.get_mut(id).data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(1.0)).unwrap();
        s.grad_mut(id).data_mut()[0] = g;
        s
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar_store(1.0);
        let mut opt = Adam::new(&s, AdamConfig::default());
        opt.step(&mut s).unwrap();
        let id = s.ids().next().unwrap();
        let moved = s.get(id).item().unwrap() - 1.0;
        assert!((moved + 2e-4 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = scalar_store(1.0);
        let mut opt = Adam::new(&s, AdamConfig::default());
        opt.step(&mut s).unwrap();
        let id = s.ids().next().unwrap();
        let m_before = opt.m[0].item().unwrap();
        s.zero_grad();
        let mut fresh = Adam::new(&s, AdamConfig::default());
        let before = s.get(id).clone();
        fresh.step(&mut s).unwrap();
        assert_eq!(s.get(id), &before);
        opt.step(&mut s).unwrap();
        assert_eq!(opt.m[0].item().unwrap(), 0.5 * m_before);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut s = scalar_store(f64::NAN);
        let mut opt = Adam::new(&s, AdamConfig::default());
        let before = s.get(s.ids().next().unwrap()).clone();
        assert!(matches!(opt.step(&mut s), Err(Error::NonFinite(_))));
        assert_eq!(opt.step, 0);
        assert_eq!(s.get(s.ids().next().unwrap()), &before);
    }
}
