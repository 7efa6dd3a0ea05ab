//! Batch normalization over the last (channel) axis.

use ndarray::ArrayD;

use crate::param::ParamTensor;
use crate::{Mode, NnError, Result, Scalar};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    /// Running statistics update as `r <- momentum * r + (1 - momentum) * batch`.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    mode: Mode,
}

/// Running statistics and affine parameters, borrowed from the layer.
pub struct BatchNormState<'a, T> {
    pub gamma: &'a [T],
    pub beta: &'a [T],
    pub running_mean: &'a mut [T],
    pub running_var: &'a mut [T],
}

/// Normalizes `x` per channel. In train mode the batch statistics
/// (biased variance) are used and folded into the running statistics; in
/// infer mode the running statistics are used unchanged.
pub fn batchnorm_forward<T: Scalar>(
    x: &ArrayD<T>,
    state: BatchNormState<'_, T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<(ArrayD<T>, BatchNormCache<T>)> {
    let shape = x.shape().to_vec();
    let c = *shape
        .last()
        .ok_or_else(|| NnError::shape("batchnorm input", &[0], &shape))?;
    if state.gamma.len() != c || state.beta.len() != c {
        return Err(NnError::shape(
            "batchnorm parameters",
            &[c],
            &[state.gamma.len()],
        ));
    }
    if mode == Mode::Train && shape[0] < 2 {
        return Err(NnError::DegenerateBatch(shape[0]));
    }
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let rows = xs.len() / c;
    let eps = T::of(cfg.epsilon);

    let (mean, var) = match mode {
        Mode::Train => {
            let m = T::of(rows as f64);
            let mut mean = vec![T::zero(); c];
            for row in xs.chunks_exact(c) {
                for (acc, &v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![T::zero(); c];
            for row in xs.chunks_exact(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let mom = T::of(cfg.momentum);
            for ch in 0..c {
                state.running_mean[ch] = mom * state.running_mean[ch] + (T::one() - mom) * mean[ch];
                state.running_var[ch] = mom * state.running_var[ch] + (T::one() - mom) * var[ch];
            }
            (mean, var)
        }
        Mode::Infer => (state.running_mean.to_vec(), state.running_var.to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(xs.len());
    let mut y = Vec::with_capacity(xs.len());
    for row in xs.chunks_exact(c) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            y.push(state.gamma[ch] * h + state.beta[ch]);
        }
    }
    let y = ArrayD::from_shape_vec(shape.clone(), y).expect("batchnorm output size");
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            shape,
            mode,
        },
    ))
}

/// Returns `(dx, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &ArrayD<T>,
    cache: &BatchNormCache<T>,
    gamma: &[T],
) -> Result<(ArrayD<T>, Vec<T>, Vec<T>)> {
    if dy.shape() != cache.shape.as_slice() {
        return Err(NnError::shape(
            "batchnorm output gradient",
            &cache.shape,
            dy.shape(),
        ));
    }
    let c = gamma.len();
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");
    let rows = dys.len() / c;

    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (drow, hrow) in dys.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] += drow[ch] * hrow[ch];
            dbeta[ch] += drow[ch];
        }
    }

    let mut dx = Vec::with_capacity(dys.len());
    match cache.mode {
        Mode::Train => {
            // dxhat = dy * gamma, so sum(dxhat) = gamma * dbeta and
            // sum(dxhat * xhat) = gamma * dgamma.
            let m = T::of(rows as f64);
            for (drow, hrow) in dys.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    let dxhat = drow[ch] * gamma[ch];
                    let mean_dxhat = gamma[ch] * dbeta[ch] / m;
                    let mean_dxhat_xhat = gamma[ch] * dgamma[ch] / m;
                    dx.push(cache.inv_std[ch] * (dxhat - mean_dxhat - hrow[ch] * mean_dxhat_xhat));
                }
            }
        }
        Mode::Infer => {
            for drow in dys.chunks_exact(c) {
                for ch in 0..c {
                    dx.push(drow[ch] * gamma[ch] * cache.inv_std[ch]);
                }
            }
        }
    }
    let dx = ArrayD::from_shape_vec(cache.shape.clone(), dx).expect("batchnorm dx size");
    Ok((dx, dgamma, dbeta))
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: ParamTensor<T>,
    pub beta: ParamTensor<T>,
    pub running_mean: ParamTensor<T>,
    pub running_var: ParamTensor<T>,
    pub config: BatchNormConfig,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: ParamTensor::new(format!("{name}/gamma"), ArrayD::ones(vec![channels]), false),
            beta: ParamTensor::new(format!("{name}/beta"), ArrayD::zeros(vec![channels]), false),
            running_mean: ParamTensor::buffer(
                format!("{name}/running_mean"),
                ArrayD::zeros(vec![channels]),
            ),
            running_var: ParamTensor::buffer(
                format!("{name}/running_var"),
                ArrayD::ones(vec![channels]),
            ),
            config: BatchNormConfig::default(),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &ArrayD<T>, mode: Mode) -> Result<ArrayD<T>> {
        let state = BatchNormState {
            gamma: self.gamma.value.as_slice().expect("contiguous"),
            beta: self.beta.value.as_slice().expect("contiguous"),
            running_mean: self.running_mean.value.as_slice_mut().expect("contiguous"),
            running_var: self.running_var.value.as_slice_mut().expect("contiguous"),
        };
        let (y, cache) = batchnorm_forward(x, state, mode, self.config)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::MissingCache(self.gamma.name.clone()))?;
        let (dx, dgamma, dbeta) =
            batchnorm_backward(dy, cache, self.gamma.value.as_slice().expect("contiguous"))?;
        for (g, d) in self.gamma.grad.iter_mut().zip(dgamma) {
            *g += d;
        }
        for (g, d) in self.beta.grad.iter_mut().zip(dbeta) {
            *g += d;
        }
        Ok(dx)
    }
}
