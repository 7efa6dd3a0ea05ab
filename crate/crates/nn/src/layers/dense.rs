use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;

use crate::param::ParamTensor;
use crate::{NnError, Result, Scalar};

pub fn dense_forward<T: Scalar>(
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    b: ArrayView1<T>,
) -> Result<Array2<T>> {
    if x.ncols() != w.nrows() {
        return Err(NnError::shape(
            "dense input",
            &[x.nrows(), w.nrows()],
            x.shape(),
        ));
    }
    if b.len() != w.ncols() {
        return Err(NnError::shape("dense bias", &[w.ncols()], b.shape()));
    }
    let mut y = x.dot(&w);
    y += &b;
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward<T: Scalar>(
    dy: ArrayView2<T>,
    x: ArrayView2<T>,
    w: ArrayView2<T>,
) -> Result<(Array2<T>, Array2<T>, Array1<T>)> {
    if dy.shape() != [x.nrows(), w.ncols()] {
        return Err(NnError::shape(
            "dense output gradient",
            &[x.nrows(), w.ncols()],
            dy.shape(),
        ));
    }
    Ok((dy.dot(&w.t()), x.t().dot(&dy), dy.sum_axis(Axis(0))))
}

#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
    input: Option<Array2<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(name: &str, inputs: usize, units: usize, l2: bool, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + units) as f64).sqrt();
        let w = ArrayD::from_shape_fn(vec![inputs, units], |_| T::of(rng.gen_range(-limit..limit)));
        Self {
            weight: ParamTensor::new(format!("{name}/kernel"), w, l2),
            bias: ParamTensor::new(format!("{name}/bias"), ArrayD::zeros(vec![units]), false),
            input: None,
        }
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[1]
    }

    fn w(&self) -> ArrayView2<'_, T> {
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("rank-2 weight")
    }

    pub fn forward(&mut self, x: &ArrayD<T>) -> Result<ArrayD<T>> {
        let x2 = x.view().into_dimensionality::<Ix2>().map_err(|_| {
            NnError::shape("dense input rank", &[0, self.weight.shape()[0]], x.shape())
        })?;
        let b = self
            .bias
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("rank-1 bias");
        let y = dense_forward(x2, self.w(), b)?;
        self.input = Some(x2.to_owned());
        Ok(y.into_dyn())
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| NnError::MissingCache(self.weight.name.clone()))?;
        let dy2 = dy
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|_| NnError::shape("dense gradient rank", &[0, 0], dy.shape()))?;
        let (dx, dw, db) = dense_backward(dy2, x.view(), self.w())?;
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &db.into_dyn();
        Ok(dx.into_dyn())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_weights_pass_through() {
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -4.0]];
        let w = Array2::<f64>::eye(3);
        let y = dense_forward(x.view(), w.view(), Array1::zeros(3).view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn backward_shapes_and_bias() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let w = array![[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]];
        let dy = array![[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        let (dx, dw, db) = dense_backward(dy.view(), x.view(), w.view()).unwrap();
        assert_eq!(dx.dim(), (3, 2));
        assert_eq!(dw.dim(), (2, 3));
        assert_eq!(db, array![2.0, 2.0, 3.0]);
        assert_eq!(dw, x.t().dot(&dy));
    }

    #[test]
    fn shape_mismatch() {
        let x = Array2::<f64>::zeros((2, 3));
        let w = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            dense_forward(x.view(), w.view(), Array1::zeros(2).view()),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}
