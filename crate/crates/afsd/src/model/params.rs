use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tensorcore::{Gradients, Tape, Tensor, Var};

use crate::error::{AfsdError, Result};

/// Named parameter tensors in a fixed (lexicographic) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

/// Tape handles for every parameter of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AfsdError::Argument(format!("no parameter named `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Pairs `names` with externally created leaves, in order.
    pub fn from_parts(names: &[String], vars: &[Var]) -> Self {
        ParamVars {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.values().cloned().collect()
    }

    /// Registers every parameter as a leaf of `tape`.
    pub fn attach(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Gradients keyed by parameter name; parameters the loss does not
    /// reach get zeros.
    pub fn collect_grads(&self, vars: &ParamVars, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(name, value)| {
                let g = vars
                    .vars
                    .get(name)
                    .and_then(|v| grads.take(*v))
                    .unwrap_or_else(|| Tensor::zeros(value.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Deterministic initialiser for parameter tensors.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("std is positive");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape and data agree")
    }

    /// Kaiming-normal conv kernel of shape `[k, cin, cout]`.
    pub fn conv(&mut self, k: usize, cin: usize, cout: usize) -> Tensor {
        self.normal(&[k, cin, cout], (2.0 / (k * cin) as f64).sqrt())
    }
}
