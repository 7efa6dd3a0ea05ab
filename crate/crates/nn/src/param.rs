use ndarray::ArrayD;

use crate::{NnError, Result, Scalar};

/// A named parameter with its gradient and Adam moments.
///
/// Non-trainable tensors (batch-norm running statistics) use the same type
/// with `trainable == false`; they are saved and averaged like weights but
/// never touched by the optimizer.
#[derive(Clone, Debug)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    pub adam_m: ArrayD<T>,
    pub adam_v: ArrayD<T>,
    /// Whether the L2 penalty `lambda * ||w||^2` applies.
    pub l2: bool,
    pub trainable: bool,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: ArrayD<T>, l2: bool) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            l2,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: ArrayD<T>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value, false)
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn reset_optimizer(&mut self) {
        self.adam_m.fill(T::zero());
        self.adam_v.fill(T::zero());
    }

    pub fn squared_norm(&self) -> T {
        self.value.iter().map(|&w| w * w).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub values: ArrayD<T>,
}

/// Ordered snapshot of every tensor value of a network (weights and
/// buffers), without gradients or optimizer state.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: Vec<NamedTensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(tensors: Vec<NamedTensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, NamedTensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, NamedTensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.values)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_compatible(&self, other: &ParamSet<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(NnError::shape(
                "parameter set",
                &[self.len()],
                &[other.len()],
            ));
        }
        for (a, b) in self.iter().zip(other.iter()) {
            if a.name != b.name {
                return Err(NnError::UnknownParam(b.name.clone()));
            }
            if a.values.shape() != b.values.shape() {
                return Err(NnError::shape(&a.name, a.values.shape(), b.values.shape()));
            }
        }
        Ok(())
    }

    pub fn into_inner(self) -> Vec<NamedTensor<T>> {
        self.tensors
    }
}

impl<'a, T> IntoIterator for &'a ParamSet<T> {
    type Item = &'a NamedTensor<T>;
    type IntoIter = std::slice::Iter<'a, NamedTensor<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.iter()
    }
}
