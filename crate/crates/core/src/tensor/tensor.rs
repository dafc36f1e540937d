use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense row-major `f32` array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![value; n], requires_grad: false, grad: None }
    }

    pub fn scalar(value: f32) -> Self {
        Self { shape: vec![], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn randn<R: Rng + ?Sized>(shape: Vec<usize>, std: f32, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let n = numel(&shape);
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Self { shape, data, requires_grad: false, grad: None }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Vec<usize>, lo: f32, hi: f32, rng: &mut R) -> Self {
        let n = numel(&shape);
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Self { shape, data, requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    /// Adds `delta` into the gradient slot, creating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (a, b) in g.iter_mut().zip(delta) {
            *a += *b;
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// Named parameter tensors with a stable (lexicographic) iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.params.remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            if t.requires_grad {
                t.zero_grad();
            }
        }
    }

    /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.requires_grad = trainable;
                if !trainable {
                    t.grad = None;
                }
            }
        }
    }

    /// Subset of parameters under a name prefix.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
        }
    }

    /// Copies values (not gradients or flags) of every tensor in `other` into
    /// `self`. Names must exist here with matching shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, src) in other.iter() {
            let dst = self.get_mut(name)?;
            if dst.shape() != src.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, checkpoint has {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn global_grad_norm(&self) -> f32 {
        let mut sq = 0.0f64;
        for t in self.params.values().filter(|t| t.requires_grad) {
            if let Some(g) = &t.grad {
                sq += g.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>();
            }
        }
        sq.sqrt() as f32
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f32) -> f32 {
        let norm = self.global_grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for t in self.params.values_mut().filter(|t| t.requires_grad) {
                if let Some(g) = &mut t.grad {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }
}
