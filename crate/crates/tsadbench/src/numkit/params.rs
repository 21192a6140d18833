//! Named parameter storage with seeded, order-independent initialization.

use indexmap::IndexMap;

use super::rng::NamedRng;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Map from parameter path to tensor, in declaration order.
///
/// Initialization draws come from a counter-based generator keyed by
/// (seed, parameter name), so two stores built from the same spec and seed
/// are element-wise identical.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: IndexMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn check_unique(&self, name: &str) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        Ok(())
    }

    /// Uniform init in ±1/sqrt(fan_in).
    pub fn insert_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<()> {
        self.check_unique(name)?;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = NamedRng::new(self.seed, name);
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|i| rng.uniform(i as u64, -bound, bound))
            .collect();
        self.params.insert(name.to_string(), Tensor::new(shape, data)?);
        Ok(())
    }

    pub fn insert_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<()> {
        self.check_unique(name)?;
        let numel: usize = shape.iter().product();
        self.params
            .insert(name.to_string(), Tensor::new(shape, vec![value; numel])?);
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        self.check_unique(name)?;
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.iter_mut() {
            t.clear_grad();
        }
    }

    /// Global L2 norm over all gradients; parameters without a gradient count
    /// as zero.
    pub fn grad_global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for (_, t) in self.iter() {
            if let Some(g) = t.grad() {
                acc += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        acc.sqrt()
    }

    /// Scales all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for (_, t) in self.iter_mut() {
                let n = t.numel();
                if let Some(g) = t.grad() {
                    let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                    debug_assert_eq!(scaled.len(), n);
                    t.set_grad(scaled).expect("grad length preserved");
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_store() {
        let mut a = ParamStore::new(13);
        let mut b = ParamStore::new(13);
        a.insert_uniform("enc.w", vec![4, 8], 4).unwrap();
        a.insert_uniform("enc.b", vec![8], 4).unwrap();
        // Insertion in a different order must not change values.
        b.insert_uniform("enc.b", vec![8], 4).unwrap();
        b.insert_uniform("enc.w", vec![4, 8], 4).unwrap();
        assert_eq!(a.get("enc.w").unwrap().data(), b.get("enc.w").unwrap().data());
        assert_eq!(a.get("enc.b").unwrap().data(), b.get("enc.b").unwrap().data());
    }

    #[test]
    fn fan_in_bound_respected() {
        let mut s = ParamStore::new(1);
        s.insert_uniform("w", vec![16, 16], 16).unwrap();
        let bound = 1.0 / 4.0;
        assert!(s
            .get("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new(1);
        s.insert_const("w", vec![2], 0.0).unwrap();
        assert!(s.insert_const("w", vec![2], 0.0).is_err());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut s = ParamStore::new(1);
        s.insert_const("w", vec![2], 0.0).unwrap();
        s.get_mut("w").unwrap().set_grad(vec![3.0, 4.0]).unwrap();
        s.clip_grad_norm(1.0);
        let g = s.get("w").unwrap().grad().unwrap();
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
