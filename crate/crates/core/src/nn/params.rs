use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Mat;
use crate::scenegen::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Mat,
    pub trainable: bool,
}

/// Named weights, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Gaussian init whose stream depends only on `(seed, name)`.
pub fn init_normal(seed: u64, name: &str, rows: usize, cols: usize, std: f64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name_hash(name)));
    let normal = Normal::new(0.0, std).expect("finite std");
    Mat::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat, trainable: bool) {
        self.params.insert(name.into(), Param { value, trainable });
    }

    /// Registers a `rows x cols` weight with `N(0, std)` entries.
    pub fn normal(&mut self, seed: u64, name: &str, rows: usize, cols: usize, std: f64, trainable: bool) {
        self.insert(name, init_normal(seed, name, rows, cols, std), trainable);
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize, trainable: bool) {
        self.insert(name, Mat::zeros((rows, cols)), trainable);
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize, trainable: bool) {
        self.insert(name, Mat::ones((rows, cols)), trainable);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> &Mat {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Sets the trainable flag on every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }
}
