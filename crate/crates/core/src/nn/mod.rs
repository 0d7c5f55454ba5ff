//! Parameters, composite layers and the optimizer.

mod layers;
mod optim;

pub use layers::{
    attention_mask, Aspp, Conv2d, LayerNorm, Linear, Lstm, MultiHeadAttention,
    TransformerEncoderLayer,
};
pub use optim::{clip_global_norm, poly_decay_lr, AdamW, AdamWConfig};

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::{hash_str, mix, rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Deterministic parameter initialization. Every parameter draws from its
/// own stream keyed by (seed, name), so values do not depend on the order
/// in which layers are constructed.
#[derive(Clone, Copy, Debug)]
pub struct Initializer {
    pub seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { seed }
    }

    fn stream(&self, name: &str) -> crate::rng::Rng {
        rng(mix(self.seed, hash_str(name)))
    }

    /// Uniform in ±√(1/fan_in).
    pub fn fan_in_uniform<T: Scalar>(&self, name: &str, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut r = self.stream(name);
        Tensor::from_fn(shape, |_| T::lit(r.gen_range(-bound..bound)))
    }

    pub fn normal<T: Scalar>(&self, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
        let mut r = self.stream(name);
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut r)))
    }
}
