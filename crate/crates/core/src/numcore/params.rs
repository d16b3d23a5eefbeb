use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::checkpoint::Container;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for every tensor of a store, in store order.
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform initialised tensor; `fan_in`/`fan_out` set the range.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(
            name,
            Tensor::new(shape.to_vec(), data).expect("glorot shape"),
        )
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum()
    }

    /// Registers every tensor as a leaf on `g`.
    pub fn bind(&self, g: &Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone())).collect())
    }

    /// Writes each tensor under `prefix.name`.
    pub fn save(&self, prefix: &str, out: &mut Container) {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.put_tensor(&format!("{prefix}.{name}"), t);
        }
    }

    /// Overwrites each tensor from `prefix.name`; shapes must agree.
    pub fn load(&mut self, prefix: &str, src: &Container) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}.{name}");
            let loaded = src.tensor(&key)?;
            if loaded.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{key}: shape {:?} does not match model {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            *t = loaded;
        }
        Ok(())
    }
}
