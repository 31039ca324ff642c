use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Ordered, uniquely named collection of tensors.
///
/// Networks keep trainable parameters and normalization running statistics in
/// two separate stores; layers refer to entries by index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its index.
    ///
    /// Panics on duplicate names; architectures are built from code, so a
    /// duplicate is a programming error.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.tensors[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
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

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Zero tensors with the same shapes, e.g. for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor with the same-named one from `other`, checking
    /// that names and shapes agree exactly.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.names != self.names {
            let missing = self
                .names
                .iter()
                .find(|n| !other.names.contains(n))
                .or_else(|| other.names.iter().find(|n| !self.names.contains(n)));
            return Err(match missing {
                Some(name) => Error::checkpoint(name.clone(), "parameter set differs"),
                None => Error::checkpoint_file("parameter order differs"),
            });
        }
        for (i, t) in other.tensors.iter().enumerate() {
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::checkpoint(
                    self.names[i].clone(),
                    format!(
                        "shape {:?} does not match expected {:?}",
                        t.shape(),
                        self.tensors[i].shape()
                    ),
                ));
            }
        }
        self.tensors = other.tensors.clone();
        Ok(())
    }
}

/// Gradients aligned index-for-index with a [`ParamStore`].
pub type Grads<T = f32> = Vec<Tensor<T>>;
