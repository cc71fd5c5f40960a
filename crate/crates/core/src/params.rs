//! Named parameter storage and its per-step binding onto a graph.

use indexmap::IndexMap;
use ocrf_diff::{Graph, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }
}

/// Insertion-ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, t)| (k.clone(), Tensor::zeros(&t.shape))).collect(),
        }
    }
}

/// Lazily places parameters on a graph the first time they are used, so
/// parameters outside the active computation never enter it.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: bool,
    bound: IndexMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            trainable: true,
            bound: IndexMap::new(),
        }
    }

    /// Binds every parameter as a constant.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self {
            trainable: false,
            ..Self::new(store)
        }
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.store.get(name)?;
        let v = g.leaf(&t.shape, t.data.clone(), self.trainable)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses an existing graph value for `name` instead of the stored tensor.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn bound(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    /// Gradients of every stored parameter; zeros for those never bound.
    pub fn gradients(&self, g: &Graph) -> ParamStore {
        let mut out = self.store.zeros_like();
        for (name, var) in &self.bound {
            out.get_mut(name)
                .expect("bound names come from the store")
                .data
                .copy_from_slice(g.grad(*var));
        }
        out
    }
}
