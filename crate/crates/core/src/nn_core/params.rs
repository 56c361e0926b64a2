//! Named parameter storage and seeded initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn_core::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// How an array is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// The trainable arrays of one network, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Places every array on the graph; `trainable = false` binds them as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.input(t.clone(), trainable)).collect()
    }

    /// Collects the gradients of bound arrays, zero-filled where no gradient flowed.
    pub fn grads(&self, g: &Graph<T>, bound: &[Var]) -> Vec<Tensor<T>> {
        bound
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// Replaces every array with values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: ParamSet<T>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Format("parameter names do not match the architecture".into()));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!(
                    "parameter shape {:?} does not match {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        self.tensors = other.tensors;
        Ok(())
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        Self { names, tensors }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// SHA-256 over names, shapes and little-endian element bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_f64c().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Declares parameters under a dotted name prefix, drawing initial values from a seeded stream.
pub struct ParamBuilder<'a, T: Real> {
    set: &'a mut ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(set: &'a mut ParamSet<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { set, rng, prefix: String::new() }
    }

    pub fn scope<'b>(&'b mut self, name: &str) -> ParamBuilder<'b, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        ParamBuilder { set: self.set, rng: self.rng, prefix }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| T::from_f64c(dist.sample(self.rng))).collect()
            }
        };
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        self.set.push(full, Tensor::new(shape, data).expect("declared shape"))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

/// Seeded generator used for every initialization and sampling stream.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overwrites every array with `N(0, std)` draws; used by tests to leave zero-init regimes.
pub fn randomize<T: Real>(set: &mut ParamSet<T>, seed: u64, std: f64) {
    let mut rng = seeded_rng(seed);
    let dist = Normal::new(0.0, std).unwrap();
    for t in set.tensors_mut() {
        for v in t.data_mut() {
            *v = T::from_f64c(dist.sample(&mut rng));
        }
    }
}

/// Random tensor with entries `U(-scale, scale)`.
pub fn uniform_tensor<T: Real>(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64c(rng.random_range(-scale..scale))).collect();
    Tensor::new(shape, data).unwrap()
}
