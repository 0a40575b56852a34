//! Named parameter collections with a fixed iteration order.
//!
//! Checkpoint bytes, optimizer state and gradient reduction all key off the
//! registration order, which keeps every downstream artifact deterministic.

use super::graph::{Gradients, Graph, VarId};
use super::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate param {name}");
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Binds every parameter into `g` as a differentiable leaf and returns
    /// the ids in registration order.
    pub fn bind_trainable(&self, g: &mut Graph) -> Vec<VarId> {
        self.tensors.iter().map(|t| g.input(t.clone().with_grad())).collect()
    }

    /// Binds every parameter as a frozen (no-grad) leaf.
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<VarId> {
        self.tensors.iter().map(|t| g.input(t.clone())).collect()
    }

    /// Extracts this set's gradients (zeros where a parameter was unused).
    pub fn grads_from(&self, grads: &Gradients, ids: &[VarId]) -> Vec<Vec<f32>> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| {
                grads
                    .get(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; self.tensors[i].numel()])
            })
            .collect()
    }
}

/// Sums per-sample gradient vectors in sample order (deterministic reduction).
pub fn sum_grads(per_sample: &[Vec<Vec<f32>>]) -> Vec<Vec<f32>> {
    assert!(!per_sample.is_empty());
    let mut acc = per_sample[0].clone();
    for sample in &per_sample[1..] {
        for (a, s) in acc.iter_mut().zip(sample) {
            for (x, y) in a.iter_mut().zip(s) {
                *x += y;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn registration_order_is_stable() {
        let mut rng = Rng::new(1, 0);
        let mut p = ParamSet::new();
        p.add("b", Tensor::randn(vec![2], 1.0, &mut rng));
        p.add("a", Tensor::randn(vec![3], 1.0, &mut rng));
        let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn gradient_roundtrip_through_graph() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
        let mut g = Graph::new();
        let ids = p.bind_trainable(&mut g);
        let sq = g.mul(ids[0], ids[0]);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        let out = p.grads_from(&grads, &ids);
        assert_eq!(out[0], vec![6.0, -2.0]);
    }
}
