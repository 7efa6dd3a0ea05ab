//! Adam with bias correction.

use crate::param::ParamTensor;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One Adam update at step `t` (1-based) for every trainable parameter:
///
/// ```text
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// w <- w - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
pub fn adam_step<'a, T, I>(params: I, cfg: &AdamConfig, t: u64)
where
    T: Scalar,
    I: IntoIterator<Item = &'a mut ParamTensor<T>>,
{
    assert!(t >= 1, "Adam steps are 1-based");
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    for p in params.into_iter().filter(|p| p.trainable) {
        let ParamTensor {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = p;
        ndarray::Zip::from(value)
            .and(&*grad)
            .and(adam_m)
            .and(adam_v)
            .for_each(|w, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

/// Adam optimizer holding the step counter; moment estimates live on each
/// [`ParamTensor`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<'a, T, I>(&mut self, params: I)
    where
        T: Scalar,
        I: IntoIterator<Item = &'a mut ParamTensor<T>>,
    {
        self.t += 1;
        adam_step(params, &self.config, self.t);
    }
}
