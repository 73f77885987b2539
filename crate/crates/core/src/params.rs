//! Named parameter storage, deterministic initialization, and per-forward
//! registration on a gradient tape.
//!
//! Every learnable tensor and every persistent buffer (batch norm running
//! statistics) lives in a [`ParamStore`] under a unique dotted name. The
//! checkpoint format serializes entries in insertion order, and the
//! initializer draws from a seeded generator in insertion order, so two
//! stores built by the same code with the same seed are bit-identical.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::tape::{GradTape, Value};
use crate::tensor::Tensor;

/// Index of a parameter inside its store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers (running statistics) are stored and checkpointed but never
    /// receive gradients and never count as model parameters.
    pub trainable: bool,
}

pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> ParamStore {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::usage(format!("duplicate parameter name {}", name)));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(id)
    }

    /// Weight init for convolutions and other ReLU-facing layers:
    /// N(0, sqrt(2 / fan_in)).
    pub fn add_he_normal(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in as f64).sqrt();
        let t = self.draw_normal(shape, std);
        self.add(name, t, true)
    }

    /// Weight init for plain linear maps: N(0, sqrt(1 / fan_in)).
    pub fn add_linear_normal(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = (1.0 / fan_in as f64).sqrt();
        let t = self.draw_normal(shape, std);
        self.add(name, t, true)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape), true)
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::ones(shape), true)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        self.add(name, tensor, false)
    }

    fn draw_normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0f64, std).expect("std is finite and positive");
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }

    /// Uniform jitter used by data augmentation, drawn from the same seeded
    /// stream family as the init (but callers should prefer their own rng).
    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamEntry)> {
        self.entries.iter_mut().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total element count of trainable tensors only.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }
}

/// Tape-registered snapshot of a store: leaves for trainable parameters,
/// constants for buffers. Rebuilt at the start of every recorded forward.
pub struct ParamValues {
    vals: Vec<Value>,
}

impl ParamValues {
    pub fn register(store: &ParamStore, tape: &mut GradTape) -> ParamValues {
        let vals = store
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    tape.leaf(&e.tensor)
                } else {
                    tape.constant(e.tensor.clone())
                }
            })
            .collect();
        ParamValues { vals }
    }

    /// Wraps values produced elsewhere (the gradient checker registers store
    /// entries as its own probe leaves). Order must match the store.
    pub fn from_values(vals: Vec<Value>) -> ParamValues {
        ParamValues { vals }
    }

    pub fn value(&self, id: ParamId) -> &Value {
        &self.vals[id.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new(7);
        let mut b = ParamStore::new(7);
        let ia = a.add_he_normal("w", &[4, 3, 3, 3], 27).unwrap();
        let ib = b.add_he_normal("w", &[4, 3, 3, 3], 27).unwrap();
        assert_eq!(a.get(ia).tensor.data(), b.get(ib).tensor.data());

        let mut c = ParamStore::new(8);
        let ic = c.add_he_normal("w", &[4, 3, 3, 3], 27).unwrap();
        assert_ne!(a.get(ia).tensor.data(), c.get(ic).tensor.data());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add_zeros("conv.bias", &[4]).unwrap();
        assert!(s.add_ones("conv.bias", &[4]).is_err());
    }

    #[test]
    fn buffers_excluded_from_trainable_count() {
        let mut s = ParamStore::new(0);
        s.add_ones("bn.gamma", &[8]).unwrap();
        s.add_zeros("bn.beta", &[8]).unwrap();
        s.add_buffer("bn.running_mean", Tensor::zeros(&[8])).unwrap();
        s.add_buffer("bn.running_var", Tensor::ones(&[8])).unwrap();
        assert_eq!(s.count_trainable(), 16);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn registered_leaves_receive_gradients() {
        let mut s = ParamStore::new(1);
        let w = s.add_ones("w", &[4]).unwrap();
        let b = s.add_buffer("b", Tensor::ones(&[4])).unwrap();
        let mut tape = GradTape::new(true);
        let vals = ParamValues::register(&s, &mut tape);
        assert!(vals.value(w).node().is_some());
        assert!(vals.value(b).node().is_none());
    }
}
