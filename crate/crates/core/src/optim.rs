//! Adaptive-moment descent with decoupled weight decay.

use alloc::vec::Vec;

use crate::autograd::Gradients;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
        }
    }
}

/// Optimizer state for one parameter group.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, group: ParamGroup, config: AdamConfig) -> Self {
        let ids: Vec<ParamId> = store.ids_in(group).collect();
        let zeros = || ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self {
            config,
            state: AdamState {
                step: 0,
                first_moment: zeros(),
                second_moment: zeros(),
            },
            ids,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Replaces the moment estimates; shapes must match the managed params.
    pub fn restore(&mut self, state: AdamState) -> Result<(), &'static str> {
        let ok = state.first_moment.len() == self.ids.len()
            && state.second_moment.len() == self.ids.len()
            && self
                .state
                .first_moment
                .iter()
                .zip(&state.first_moment)
                .zip(&state.second_moment)
                .all(|((a, m), v)| a.shape() == m.shape() && a.shape() == v.shape());
        if !ok {
            return Err("optimizer state does not match parameter shapes");
        }
        self.state = state;
        Ok(())
    }

    /// One update. Params without a gradient are treated as having a zero
    /// gradient; only the managed group is ever written.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let cfg = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for (k, &id) in self.ids.iter().enumerate() {
            let grad = grads.param(id);
            let m = self.state.first_moment[k].data_mut();
            let v = self.state.second_moment[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[i]);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.lr * cfg.weight_decay * p[i];
                p[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{GradTarget, Graph};
    use crate::params::ParamGroup;

    #[test]
    fn zero_gradient_only_decays() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Weights, Tensor::from_vec(&[2], alloc::vec![1.0, -2.0]));
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(&store, ParamGroup::Weights, cfg);
        let none = Gradients::none(&store);
        adam.step(&mut store, &none);
        let decay = 1.0 - cfg.lr * cfg.weight_decay;
        assert_eq!(store.get(id).data(), &[1.0 * decay, -2.0 * decay]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Weights, Tensor::from_vec(&[3], alloc::vec![0.0, 0.0, 0.0]));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(&store, ParamGroup::Weights, cfg);
        let grads = {
            let mut g = Graph::new(&store, GradTarget::Weights);
            let w = g.param(id);
            let l = g.dot_const(w, alloc::vec![2.0, -0.5, 1e-3]);
            g.backward(l)
        };
        adam.step(&mut store, &grads);
        for (&p, &s) in store.get(id).data().iter().zip(&[-1.0, 1.0, -1.0]) {
            assert!((p - s * cfg.lr).abs() < 1e-4 * cfg.lr, "{}", p);
        }
    }
}
