//! Named parameter tensors and their initialisation.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::Mat;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of uniquely named matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.id(name).map(|id| &mut self.values[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.values.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Rounds every value to the nearest `f32`, matching what a checkpoint
    /// stores.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Overwrites `name` with `value`, checking the shape.
    pub fn assign(&mut self, name: &str, value: Mat) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("unknown tensor {name}")))?;
        let slot = &mut self.values[id.0];
        if slot.dim() != value.dim() {
            return Err(CoreError::Shape(format!(
                "tensor {name}: expected {:?}, got {:?}",
                slot.dim(),
                value.dim()
            )));
        }
        *slot = value;
        Ok(())
    }
}

/// Gradients aligned with the tensors of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Mat>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| Mat::zeros(v.dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn by_name<'a>(&'a self, store: &ParamStore, name: &str) -> Option<&'a Mat> {
        store.id(name).map(|id| &self.grads[id.0])
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Creates parameters with a seeded generator while layers are being built.
pub struct ParamBuilder {
    pub store: ParamStore,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn push(&mut self, scope: impl Into<String>) {
        self.prefix.push(scope.into());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    /// Runs `f` with `scope` appended to the name prefix.
    pub fn scoped<T>(&mut self, scope: impl Into<String>, f: impl FnOnce(&mut Self) -> T) -> T {
        self.push(scope);
        let out = f(self);
        self.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut self.rng;
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        let full = self.full_name(name);
        self.store.insert(full, value)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        let full = self.full_name(name);
        self.store.insert(full, Array2::from_elem((rows, cols), value))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.constant(name, rows, cols, 0.0)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}
