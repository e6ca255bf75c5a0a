//! Named parameter storage.
//!
//! All trainable tensors live in one flat `ParamStore`, keyed by
//! slash-separated names ("editor/input/conv0/w"). Freezing, optimizer
//! partitioning and checkpointing all operate on name prefixes. Iteration is
//! sorted (BTreeMap), so serialization and optimizer sweeps are
//! order-deterministic.

use super::TensorD;
use crate::error::{Error, Result};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

/// Flat named-tensor map holding every trainable parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, TensorD>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: TensorD) {
        let prev = self.map.insert(name.to_string(), t);
        assert!(prev.is_none(), "duplicate parameter name: {name}");
    }

    pub fn get(&self, name: &str) -> &TensorD {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn try_get(&self, name: &str) -> Result<&TensorD> {
        self.map
            .get(name)
            .ok_or_else(|| Error::schema(format!("missing parameter namespace entry: {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut TensorD {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorD)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Names under a `prefix` namespace ("disc" matches "disc/..." entries).
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> {
        self.map.keys().filter(move |n| in_namespace(n, prefix))
    }

    pub fn num_tensors(&self) -> usize {
        self.map.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }
}

/// True when parameter `name` belongs to namespace `prefix`
/// (exact match or a `/`-separated descendant).
pub fn in_namespace(name: &str, prefix: &str) -> bool {
    name == prefix || (name.starts_with(prefix) && name.as_bytes().get(prefix.len()) == Some(&b'/'))
}

/// Deterministic per-parameter RNG: the stream depends only on the global
/// seed and the parameter name, never on registration order.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Register a tensor of normal(0, std) entries.
pub fn init_normal(store: &mut ParamStore, seed: u64, name: &str, shape: &[usize], std: f64) {
    let mut rng = param_rng(seed, name);
    let dist = Normal::new(0.0, std).expect("valid std");
    let t = TensorD::from_shape_fn(IxDyn(shape), |_| dist.sample(&mut rng));
    store.insert(name, t);
}

/// Register an all-`value` tensor.
pub fn init_const(store: &mut ParamStore, name: &str, shape: &[usize], value: f64) {
    store.insert(name, TensorD::from_elem(IxDyn(shape), value));
}

/// He-style fan-in initialization for conv / linear weights.
pub fn init_he(store: &mut ParamStore, seed: u64, name: &str, shape: &[usize], fan_in: usize) {
    let std = (2.0 / fan_in as f64).sqrt();
    init_normal(store, seed, name, shape, std);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::new();
        init_he(&mut a, 7, "x/w", &[4, 4], 4);
        init_he(&mut a, 7, "y/w", &[4, 4], 4);
        let mut b = ParamStore::new();
        init_he(&mut b, 7, "y/w", &[4, 4], 4);
        init_he(&mut b, 7, "x/w", &[4, 4], 4);
        assert_eq!(a, b);
    }

    #[test]
    fn namespace_matching_is_component_wise() {
        assert!(in_namespace("disc/head/w", "disc"));
        assert!(in_namespace("disc", "disc"));
        assert!(!in_namespace("discx/head/w", "disc"));
        assert!(in_namespace("editor/input/c0/w", "editor/input"));
        assert!(!in_namespace("editor/inputx/w", "editor/input"));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        init_const(&mut s, "a", &[1], 0.0);
        init_const(&mut s, "a", &[1], 0.0);
    }
}
