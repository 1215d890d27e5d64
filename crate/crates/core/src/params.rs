//! Named parameter storage and the per-forward binding context.
//!
//! Parameters are initialized on first use. Each parameter's init stream is
//! derived from (model seed, parameter name), so initialization does not
//! depend on the order in which layers touch the store.

use crate::autodiff::Tensor;
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// He-style fan-in scaled uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a, stable across platforms and runs
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Scalar> {
    values: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<F>> {
        self.values.get_mut(name)
    }

    pub fn set(&mut self, name: &str, value: ArrayD<F>) {
        self.values.insert(name.to_string(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<F>)> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<F>)> {
        self.values.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    fn init_if_absent(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) {
        if self.values.contains_key(name) {
            return;
        }
        let value = match init {
            Init::Zeros => ArrayD::zeros(IxDyn(shape)),
            Init::Ones => ArrayD::ones(IxDyn(shape)),
            Init::HeUniform { fan_in } => {
                let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha20Rng::seed_from_u64(seed ^ name_hash(name));
                let n: usize = shape.iter().product();
                let data: Vec<F> = (0..n)
                    .map(|_| F::of_f64(rng.gen_range(-limit..limit)))
                    .collect();
                ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
            }
        };
        self.values.insert(name.to_string(), value);
    }
}

/// Binds store entries to autodiff leaves for one forward pass.
pub struct Ctx<'a, F: Scalar> {
    store: &'a mut ParamStore<F>,
    leaves: BTreeMap<String, Tensor<F>>,
    seed: u64,
    track_grad: bool,
}

impl<'a, F: Scalar> Ctx<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, seed: u64, track_grad: bool) -> Self {
        Ctx {
            store,
            leaves: BTreeMap::new(),
            seed,
            track_grad,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Tensor<F> {
        if let Some(t) = self.leaves.get(name) {
            return t.clone();
        }
        self.store.init_if_absent(name, shape, init, self.seed);
        let value = self.store.get(name).unwrap();
        assert_eq!(
            value.shape(),
            shape,
            "parameter {name} shape changed between runs"
        );
        let t = if self.track_grad {
            Tensor::leaf(value.clone())
        } else {
            Tensor::constant(value.clone())
        };
        self.leaves.insert(name.to_string(), t.clone());
        t
    }

    /// The bound leaves, for gradient collection after the pass.
    pub fn into_leaves(self) -> BTreeMap<String, Tensor<F>> {
        self.leaves
    }

    /// Gradients of every bound parameter after a backward pass.
    pub fn gradients(&self) -> BTreeMap<String, ArrayD<F>> {
        self.leaves
            .iter()
            .filter_map(|(n, t)| t.grad().map(|g| (n.clone(), g)))
            .collect()
    }
}
