//! Parameter update rules: plain gradient descent and Adam.

use indexmap::IndexMap;

use super::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer state: per-parameter moments and a step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimKind,
    learning_rate: f64,
    step_count: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
    /// When set, only parameters whose name starts with one of these
    /// prefixes are updated (used by adversarial two-player training).
    prefixes: Option<Vec<String>>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimKind::Sgd,
            learning_rate,
            step_count: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
            prefixes: None,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            learning_rate,
            step_count: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
            prefixes: None,
        }
    }

    /// Restricts updates to parameters under the given name prefixes.
    pub fn with_prefixes(mut self, prefixes: &[&str]) -> Self {
        self.prefixes = Some(prefixes.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn updates(&self, name: &str) -> bool {
        match &self.prefixes {
            None => true,
            Some(ps) => ps.iter().any(|p| name.starts_with(p.as_str())),
        }
    }

    /// Applies one update using the gradients stored in `params`.
    /// Every selected parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count;
        let names: Vec<String> = params
            .names()
            .filter(|n| self.updates(n))
            .map(|n| n.to_string())
            .collect();
        for name in names {
            let tensor = params.get_mut(&name)?;
            let n = tensor.numel();
            let grad = tensor
                .grad()
                .ok_or_else(|| Error::contract(format!("missing gradient for `{name}`")))?
                .to_vec();
            match self.kind {
                OptimKind::Sgd => {
                    let lr = self.learning_rate;
                    for (p, g) in tensor.data_mut().iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimKind::Adam { beta1, beta2, eps } => {
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; n]);
                    for (mv, g) in m.iter_mut().zip(&grad) {
                        *mv = beta1 * *mv + (1.0 - beta1) * g;
                    }
                    let v = self
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; n]);
                    for (vv, g) in v.iter_mut().zip(&grad) {
                        *vv = beta2 * *vv + (1.0 - beta2) * g * g;
                    }
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    let lr = self.learning_rate;
                    let m = &self.first[&name];
                    let v = &self.second[&name];
                    for i in 0..n {
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        tensor.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::tensor::Tensor;

    fn store_with_grad(p: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert_tensor("p", Tensor::new(vec![1], vec![p]).unwrap())
            .unwrap();
        s.get_mut("p").unwrap().set_grad(vec![g]).unwrap();
        s
    }

    #[test]
    fn sgd_basic_step() {
        let mut s = store_with_grad(1.0, 2.0);
        let mut opt = Optimizer::sgd(0.1);
        opt.step(&mut s).unwrap();
        assert!((s.get("p").unwrap().data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        for &g in &[1e-6, 1.0, 1e6] {
            let mut s = store_with_grad(0.0, g);
            let mut opt = Optimizer::adam(0.01);
            opt.step(&mut s).unwrap();
            let delta = s.get("p").unwrap().data()[0].abs();
            assert!((delta - 0.01).abs() < 1e-4, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store_with_grad(3.0, 0.0);
        let mut opt = Optimizer::adam(0.01);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("p").unwrap().data()[0], 3.0);
        let mut s2 = store_with_grad(3.0, 0.0);
        let mut opt2 = Optimizer::sgd(0.5);
        opt2.step(&mut s2).unwrap();
        assert_eq!(s2.get("p").unwrap().data()[0], 3.0);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut s = ParamStore::new(0);
        s.insert_const("p", vec![2], 1.0).unwrap();
        let mut opt = Optimizer::sgd(0.1);
        assert!(matches!(opt.step(&mut s), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn prefix_filter_limits_updates() {
        let mut s = ParamStore::new(0);
        s.insert_const("gen.w", vec![1], 1.0).unwrap();
        s.insert_const("disc.w", vec![1], 1.0).unwrap();
        s.get_mut("gen.w").unwrap().set_grad(vec![1.0]).unwrap();
        s.get_mut("disc.w").unwrap().set_grad(vec![1.0]).unwrap();
        let mut opt = Optimizer::sgd(0.5).with_prefixes(&["gen."]);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("gen.w").unwrap().data()[0], 0.5);
        assert_eq!(s.get("disc.w").unwrap().data()[0], 1.0);
    }
}
