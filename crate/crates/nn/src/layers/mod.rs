//! Layer kinds, their declarative specs, and sequential stacks.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;

use ndarray::{ArrayD, Ix2, Ix4};
use rand::Rng;

use crate::param::ParamTensor;
use crate::{Mode, NnError, Result, Scalar};

pub use activation::Relu;
pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        l2: bool,
    },
    BatchNorm,
    Relu,
    MaxPool2x2,
    Dropout {
        rate: f64,
    },
    GlobalAvgPool,
    Dense {
        units: usize,
        l2: bool,
    },
    /// Marks the end of a classifier head. The network returns logits and
    /// the softmax is applied by the loss and by prediction.
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2x2 => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::GlobalAvgPool => "globalavgpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// Feature layout flowing between layers while a stack is being built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureShape {
    /// NHWC with the given channel count.
    Spatial(usize),
    /// `(batch, features)`.
    Flat(usize),
}

impl FeatureShape {
    pub fn width(self) -> usize {
        match self {
            FeatureShape::Spatial(c) | FeatureShape::Flat(c) => c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool2x2 {
    cache: Option<pool::MaxPoolCache>,
}

#[derive(Clone, Debug)]
pub struct GlobalAvgPool {
    input_shape: Option<[usize; 4]>,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu<T>),
    MaxPool2x2(MaxPool2x2),
    Dropout(Dropout<T>),
    GlobalAvgPool(GlobalAvgPool),
    Dense(Dense<T>),
}

fn rank4<'a, T: Scalar>(x: &'a ArrayD<T>, what: &str) -> Result<ndarray::ArrayView4<'a, T>> {
    x.view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| NnError::shape(format!("{what} rank"), &[0, 0, 0, 0], x.shape()))
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &ArrayD<T>, mode: Mode, step_seed: u64) -> Result<ArrayD<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::MaxPool2x2(l) => {
                let (y, cache) = pool::maxpool2x2_forward(rank4(x, "maxpool input")?)?;
                l.cache = Some(cache);
                Ok(y.into_dyn())
            }
            Layer::Dropout(l) => l.forward(x, mode, step_seed),
            Layer::GlobalAvgPool(l) => {
                let x4 = rank4(x, "global average pool input")?;
                let (n, h, w, c) = x4.dim();
                l.input_shape = Some([n, h, w, c]);
                Ok(pool::global_avg_pool(x4).into_dyn())
            }
            Layer::Dense(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::MaxPool2x2(l) => {
                let cache = l
                    .cache
                    .as_ref()
                    .ok_or_else(|| NnError::MissingCache("maxpool".into()))?;
                Ok(pool::maxpool2x2_backward(rank4(dy, "maxpool gradient")?, cache)?.into_dyn())
            }
            Layer::Dropout(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => {
                let shape = l
                    .input_shape
                    .ok_or_else(|| NnError::MissingCache("global average pool".into()))?;
                let dy2 = dy.view().into_dimensionality::<Ix2>().map_err(|_| {
                    NnError::shape("global average pool gradient rank", &[0, 0], dy.shape())
                })?;
                Ok(pool::global_avg_pool_backward(dy2, shape)?.into_dyn())
            }
            Layer::Dense(l) => l.backward(dy),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        match self {
            Layer::Conv2d(l) => vec![&l.kernel, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.kernel, &mut l.bias],
            Layer::BatchNorm(l) => vec![
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Folds the piecewise-linear branch decisions of the last forward pass
    /// (ReLU activity, max-pool selections) into `acc`.
    fn fold_kinks(&self, acc: &mut u64) {
        let mut mix = |v: u64| *acc = (*acc ^ v).wrapping_mul(0x0000_0100_0000_01b3);
        match self {
            Layer::Relu(l) => l.active_mask().for_each(|on| mix(on as u64)),
            Layer::MaxPool2x2(l) => {
                if let Some(c) = &l.cache {
                    c.argmax().iter().for_each(|&i| mix(i as u64));
                }
            }
            _ => {}
        }
    }
}

/// A linear stack of layers.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    specs: Vec<LayerSpec>,
    input: FeatureShape,
    output: FeatureShape,
}

impl<T: Scalar> Sequential<T> {
    /// Instantiates `specs` for inputs of shape `input`. Parameter names are
    /// `{prefix}/{index:02}_{kind}`. A `Softmax` spec may only appear last
    /// and contributes no layer.
    pub fn build<R: Rng>(
        prefix: &str,
        specs: &[LayerSpec],
        input: FeatureShape,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{prefix}/{i:02}_{}", spec.kind());
            let layer = match (spec, shape) {
                (LayerSpec::Conv2d { filters, l2 }, FeatureShape::Spatial(c)) => {
                    if *filters == 0 {
                        return Err(NnError::BadSpec(format!("{name}: filters must be >= 1")));
                    }
                    shape = FeatureShape::Spatial(*filters);
                    Layer::Conv2d(Conv2d::new(&name, c, *filters, *l2, rng))
                }
                (LayerSpec::BatchNorm, s) => Layer::BatchNorm(BatchNorm::new(&name, s.width())),
                (LayerSpec::Relu, _) => Layer::Relu(Relu::new()),
                (LayerSpec::MaxPool2x2, FeatureShape::Spatial(_)) => {
                    Layer::MaxPool2x2(MaxPool2x2 { cache: None })
                }
                (LayerSpec::Dropout { rate }, _) => Layer::Dropout(Dropout::new(&name, *rate)?),
                (LayerSpec::GlobalAvgPool, FeatureShape::Spatial(c)) => {
                    shape = FeatureShape::Flat(c);
                    Layer::GlobalAvgPool(GlobalAvgPool { input_shape: None })
                }
                (LayerSpec::Dense { units, l2 }, FeatureShape::Flat(n)) => {
                    if *units == 0 {
                        return Err(NnError::BadSpec(format!("{name}: units must be >= 1")));
                    }
                    shape = FeatureShape::Flat(*units);
                    Layer::Dense(Dense::new(&name, n, *units, *l2, rng))
                }
                (LayerSpec::Softmax, _) if i + 1 == specs.len() => continue,
                (LayerSpec::Softmax, _) => {
                    return Err(NnError::BadSpec(format!(
                        "{name}: softmax must be the last layer"
                    )))
                }
                (spec, shape) => {
                    return Err(NnError::BadSpec(format!(
                        "{name}: {} cannot follow {shape:?}",
                        spec.kind()
                    )))
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            layers,
            specs: specs.to_vec(),
            input,
            output: shape,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn output_shape(&self) -> FeatureShape {
        self.output
    }

    pub fn forward(&mut self, x: &ArrayD<T>, mode: Mode, step_seed: u64) -> Result<ArrayD<T>> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode, step_seed)?;
        for layer in iter {
            h = layer.forward(&h, mode, step_seed)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    pub(crate) fn fold_kinks(&self, acc: &mut u64) {
        self.layers.iter().for_each(|l| l.fold_kinks(acc));
    }
}
