//! Dense f64 tensors, parameter sets and the layer kernels both networks are
//! built from. Layers are free functions with explicit backward passes; there
//! is no autograd tape.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod layers;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta, StoredTensor};
pub use gradcheck::{gradient_check, gradient_check_piecewise, PiecewiseCheck, FD_STEP};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense array of f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Input(format!("shape {shape:?} has a zero extent")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Input(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::Input(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// A trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters of one network, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Param)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let grad = Tensor::zeros(value.shape());
        let param = Param { value, grad };
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some((_, slot)) => *slot = param,
            None => self.entries.push((name, param)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }

    /// Value of a parameter the network itself registered; panics on a typo.
    pub fn value(&self, name: &str) -> &Tensor {
        &self
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.entries.iter().all(|(_, p)| p.grad.is_finite())
    }

    pub fn values_finite(&self) -> bool {
        self.entries.iter().all(|(_, p)| p.value.is_finite())
    }

    /// Same names, order and shapes.
    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, pa), (b, pb))| a == b && pa.value.shape() == pb.value.shape())
    }

    /// Flat view over every value scalar, in entry order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().copied())
            .collect()
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [(String, Param)] {
        &mut self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_extent_product() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn param_grad_shape_matches_value() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::zeros(&[3, 4]));
        ps.insert("b", Tensor::zeros(&[5]));
        for (_, p) in ps.iter() {
            assert_eq!(p.value.shape(), p.grad.shape());
        }
        assert_eq!(ps.scalar_count(), 17);
        assert_eq!(ps.names().collect::<Vec<_>>(), ["w", "b"]);
    }

    #[test]
    fn congruence_requires_matching_shapes() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::zeros(&[2, 2]));
        let mut b = a.clone();
        assert!(a.is_congruent(&b));
        b.insert("w", Tensor::zeros(&[2, 3]));
        assert!(!a.is_congruent(&b));
    }
}
