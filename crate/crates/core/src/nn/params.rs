use super::tensor::Tensor;
use crate::error::{HerdError, Result};
use rand::Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor { shape: shape.to_vec(), data })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParameterSet) -> Result<()> {
        if self.names != other.names {
            return Err(HerdError::shape("copy_from", "parameter names differ"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape != b.shape {
                return Err(HerdError::shape("copy_from", format!("{:?} vs {:?}", a.shape, b.shape)));
            }
            a.data.copy_from_slice(&b.data);
        }
        Ok(())
    }
}

/// Gradient buffers laid out like a [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub(crate) bufs: Vec<Vec<f32>>,
}

impl Grads {
    pub fn zeros_like(ps: &ParameterSet) -> Self {
        Self { bufs: ps.values.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.bufs.iter().map(Vec::as_slice)
    }

    /// Global L2 norm, accumulated in f64 in parameter order.
    pub fn global_norm(&self) -> f64 {
        self.bufs.iter().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f32) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
}
