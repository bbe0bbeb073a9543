//! Minimal deterministic neural-network engine.
//!
//! Everything is explicit: parameters live in a name-keyed [`Tensors`] store,
//! layers are shape descriptors with hand-written forward/backward passes, and
//! all computation is generic over [`Scalar`] so training runs in f32 while
//! finite-difference gradient checks run in f64. No threads, no global state;
//! identical inputs and seeds give bit-identical results.

use std::fmt::{Debug, Display};

use indexmap::IndexMap;
use ndarray::{ArrayD, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod layers;

pub use adam::Adam;

pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + Display + Debug + Send + Sync + Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;
}

use std::iter::Sum;

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Shorthand numeric literal cast used throughout the engine.
#[inline]
pub fn s<F: Scalar>(x: f64) -> F {
    F::from_f64(x)
}

/// Name-keyed tensor store for parameters, gradients, and optimizer state.
/// Iteration follows insertion order, which fixes the optimizer update order
/// and the checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors<F> {
    map: IndexMap<String, ArrayD<F>>,
}

impl<F: Scalar> Tensors<F> {
    pub fn new() -> Self {
        Tensors {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<F>) {
        let name = name.into();
        assert!(
            self.map.insert(name.clone(), value).is_none(),
            "duplicate tensor name {name}"
        );
    }

    pub fn get(&self, name: &str) -> &ArrayD<F> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<F> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Accumulate into `name`, creating a zero tensor on first touch.
    pub fn add_to(&mut self, name: &str, delta: &ArrayD<F>) {
        match self.map.get_mut(name) {
            Some(t) => {
                debug_assert_eq!(t.shape(), delta.shape(), "gradient shape for {name}");
                ndarray::Zip::from(t).and(delta).for_each(|a, &b| *a = *a + b);
            }
            None => {
                self.map.insert(name.to_string(), delta.clone());
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<F>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Zeroed store with the same names and shapes; used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut out = Tensors::new();
        for (k, v) in &self.map {
            out.map.insert(k.clone(), ArrayD::zeros(v.raw_dim()));
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for v in self.map.values_mut() {
            v.fill(F::zero());
        }
    }

    pub fn cast<G: Scalar>(&self) -> Tensors<G> {
        let mut out = Tensors::new();
        for (k, v) in &self.map {
            out.map
                .insert(k.clone(), v.mapv(|x| G::from_f64(x.to_f64())));
        }
        out
    }
}

impl<F: Scalar> Default for Tensors<F> {
    fn default() -> Self {
        Tensors::new()
    }
}

/// Fan-in-scaled uniform initialization, U(−1/√fan_in, 1/√fan_in).
pub fn init_uniform<F: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> ArrayD<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = ArrayD::zeros(ndarray::IxDyn(shape));
    for v in t.iter_mut() {
        *v = s(rng.gen_range(-bound..bound));
    }
    t
}
