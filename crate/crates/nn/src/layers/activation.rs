use ndarray::ArrayD;

use crate::{NnError, Result, Scalar};

pub fn relu_forward<T: Scalar>(x: &ArrayD<T>) -> ArrayD<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of `max(0, x)`; zero at `x == 0`.
pub fn relu_backward<T: Scalar>(dy: &ArrayD<T>, x: &ArrayD<T>) -> Result<ArrayD<T>> {
    if dy.shape() != x.shape() {
        return Err(NnError::shape("relu gradient", x.shape(), dy.shape()));
    }
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    Ok(dx)
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    input: Option<ArrayD<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn forward(&mut self, x: &ArrayD<T>) -> ArrayD<T> {
        let y = relu_forward(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| NnError::MissingCache("relu".into()))?;
        relu_backward(dy, x)
    }

    pub(crate) fn active_mask(&self) -> impl Iterator<Item = bool> + '_ {
        self.input
            .iter()
            .flat_map(|x| x.iter().map(|&v| v > T::zero()))
    }
}
