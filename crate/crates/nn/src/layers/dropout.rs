//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` during
//! training so inference is the identity.

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seed::{derive_seed, fnv1a};
use crate::{Mode, NnError, Result, Scalar};

pub fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NnError::BadRate(rate))
    }
}

/// Applies dropout and returns the output with the multiplicative mask
/// (entries `0` or `1 / (1 - rate)`), or `None` when the pass is the identity.
pub fn dropout<T: Scalar>(
    x: &ArrayD<T>,
    rate: f64,
    seed: u64,
    mode: Mode,
) -> Result<(ArrayD<T>, Option<ArrayD<T>>)> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = ArrayD::from_shape_simple_fn(x.raw_dim(), || {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    Ok((x * &mask, Some(mask)))
}

#[derive(Clone, Debug)]
pub struct Dropout<T> {
    pub rate: f64,
    salt: u64,
    mask: Option<Option<ArrayD<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(name: &str, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self {
            rate,
            salt: fnv1a(name.as_bytes()),
            mask: None,
        })
    }

    /// The mask seed is derived from the step seed and the layer name, so
    /// two dropout layers never share a mask stream.
    pub fn forward(&mut self, x: &ArrayD<T>, mode: Mode, step_seed: u64) -> Result<ArrayD<T>> {
        let (y, mask) = dropout(
            x,
            self.rate,
            derive_seed(step_seed, "dropout", &[self.salt]),
            mode,
        )?;
        self.mask = Some(mask);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        match &self.mask {
            None => Err(NnError::MissingCache("dropout".into())),
            Some(None) => Ok(dy.clone()),
            Some(Some(mask)) => {
                if mask.shape() != dy.shape() {
                    return Err(NnError::shape("dropout gradient", mask.shape(), dy.shape()));
                }
                Ok(dy * mask)
            }
        }
    }
}
