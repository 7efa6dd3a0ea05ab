use ndarray::{Array2, Axis};

use crate::param::ParamTensor;
use crate::{NnError, Result, Scalar};

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean categorical cross-entropy plus `lambda * sum ||w||^2` over the
/// parameters flagged for L2.
///
/// Returns the loss and the gradient with respect to the logits,
/// `(softmax - onehot) / batch`. The penalty gradient `2 * lambda * w` is
/// not included here; see [`crate::Network::add_l2_grad`].
pub fn softmax_xent_loss<'a, T, I>(
    logits: &Array2<T>,
    onehot: &Array2<T>,
    params: I,
    lambda: f64,
) -> Result<(T, Array2<T>)>
where
    T: Scalar,
    I: IntoIterator<Item = &'a ParamTensor<T>>,
{
    if logits.dim() != onehot.dim() {
        return Err(NnError::shape(
            "cross-entropy targets",
            logits.shape(),
            onehot.shape(),
        ));
    }
    let n = T::of(logits.nrows() as f64);
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut total = T::zero();
    for ((row, target), mut grad) in logits
        .axis_iter(Axis(0))
        .zip(onehot.axis_iter(Axis(0)))
        .zip(dlogits.axis_iter_mut(Axis(0)))
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for ((g, &z), &y) in grad.iter_mut().zip(row.iter()).zip(target.iter()) {
            let log_p = z - max - log_sum;
            total -= y * log_p;
            *g = (log_p.exp() - y) / n;
        }
    }
    let mut loss = total / n;
    if lambda != 0.0 {
        let penalty: T = params
            .into_iter()
            .filter(|p| p.l2)
            .map(ParamTensor::squared_norm)
            .sum();
        loss += T::of(lambda) * penalty;
    }
    Ok((loss, dlogits))
}
