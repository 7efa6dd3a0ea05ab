//! Multi-branch network: one convolutional branch per input, branch
//! features concatenated, then a dense classifier head.

use ndarray::{concatenate, s, Array2, ArrayD, ArrayView2, Axis, Ix2};

use crate::layers::{FeatureShape, LayerSpec, Sequential};
use crate::loss::{softmax, softmax_xent_loss};
use crate::optim::Adam;
use crate::param::{NamedTensor, ParamSet, ParamTensor};
use crate::seed::rng_for;
use crate::{Mode, NnError, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct BranchSpec {
    pub name: String,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub branches: Vec<BranchSpec>,
    pub head: Vec<LayerSpec>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    branches: Vec<Sequential<T>>,
    head: Sequential<T>,
    branch_widths: Vec<usize>,
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes the network. Initialization draws from a
    /// stream derived from `seed`, so equal specs and seeds give identical
    /// weights.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        if spec.branches.is_empty() {
            return Err(NnError::BadSpec("network needs at least one branch".into()));
        }
        let mut rng = rng_for(seed, "init", &[]);
        let mut branches = Vec::with_capacity(spec.branches.len());
        let mut branch_widths = Vec::with_capacity(spec.branches.len());
        for b in &spec.branches {
            let seq = Sequential::build(
                &b.name,
                &b.layers,
                FeatureShape::Spatial(b.in_channels),
                &mut rng,
            )?;
            match seq.output_shape() {
                FeatureShape::Flat(w) => branch_widths.push(w),
                FeatureShape::Spatial(_) => {
                    return Err(NnError::BadSpec(format!(
                        "branch {} must end in flat features",
                        b.name
                    )))
                }
            }
            branches.push(seq);
        }
        let features = branch_widths.iter().sum();
        let head = Sequential::build("head", &spec.head, FeatureShape::Flat(features), &mut rng)?;
        Ok(Self {
            spec: spec.clone(),
            branches,
            head,
            branch_widths,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Width of the concatenated branch features fed to the head.
    pub fn feature_width(&self) -> usize {
        self.branch_widths.iter().sum()
    }

    pub fn output_width(&self) -> usize {
        self.head.output_shape().width()
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    /// Returns the logits, shape `(batch, outputs)`.
    pub fn forward(
        &mut self,
        inputs: &[ArrayD<T>],
        mode: Mode,
        step_seed: u64,
    ) -> Result<Array2<T>> {
        if inputs.len() != self.branches.len() {
            return Err(NnError::shape(
                "branch inputs",
                &[self.branches.len()],
                &[inputs.len()],
            ));
        }
        let batch = inputs[0].shape().first().copied().unwrap_or(0);
        let mut features = Vec::with_capacity(inputs.len());
        for (branch, x) in self.branches.iter_mut().zip(inputs) {
            if x.shape().first() != Some(&batch) {
                return Err(NnError::shape("branch batch size", &[batch], x.shape()));
            }
            let f = branch.forward(x, mode, step_seed)?;
            features.push(f.into_dimensionality::<Ix2>().expect("flat branch output"));
        }
        let views: Vec<ArrayView2<T>> = features.iter().map(|f| f.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("branch batch sizes agree");
        let logits = self.head.forward(&concat.into_dyn(), mode, step_seed)?;
        Ok(logits
            .into_dimensionality::<Ix2>()
            .expect("flat head output"))
    }

    /// Backpropagates `dlogits`, accumulating parameter gradients. Returns
    /// the gradient with respect to each branch input.
    pub fn backward(&mut self, dlogits: &Array2<T>) -> Result<Vec<ArrayD<T>>> {
        let dfeat = self.head.backward(&dlogits.clone().into_dyn())?;
        let dfeat = dfeat
            .into_dimensionality::<Ix2>()
            .expect("flat feature gradient");
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.branches.len());
        for (branch, &w) in self.branches.iter_mut().zip(&self.branch_widths) {
            let slice = dfeat
                .slice(s![.., offset..offset + w])
                .to_owned()
                .into_dyn();
            grads.push(branch.backward(&slice)?);
            offset += w;
        }
        Ok(grads)
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.branches
            .iter()
            .flat_map(|b| b.params())
            .chain(self.head.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .chain(self.head.params_mut())
    }

    pub fn num_parameters(&self) -> usize {
        self.params()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn reset_optimizer_state(&mut self) {
        self.params_mut().for_each(ParamTensor::reset_optimizer);
    }

    pub fn param_set(&self) -> ParamSet<T> {
        ParamSet::new(
            self.params()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    values: p.value.clone(),
                })
                .collect(),
        )
    }

    /// Overwrites every tensor value from `set`, which must list the same
    /// names and shapes in the same order.
    pub fn load_param_set(&mut self, set: &ParamSet<T>) -> Result<()> {
        self.param_set().check_compatible(set)?;
        for (p, t) in self.params_mut().zip(set.iter()) {
            p.value.assign(&t.values);
        }
        Ok(())
    }

    pub fn l2_penalty(&self, lambda: f64) -> T {
        T::of(lambda)
            * self
                .params()
                .filter(|p| p.l2)
                .map(ParamTensor::squared_norm)
                .sum::<T>()
    }

    /// Adds the penalty gradient `2 * lambda * w` to every L2-flagged parameter.
    pub fn add_l2_grad(&mut self, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        let k = T::of(2.0 * lambda);
        for p in self.params_mut().filter(|p| p.l2) {
            let ParamTensor { value, grad, .. } = p;
            grad.zip_mut_with(value, |g, &w| *g += k * w);
        }
    }

    /// Loss and gradients (accumulated into the parameters) for one batch in
    /// train mode; no parameter update.
    pub fn loss_and_grad(
        &mut self,
        inputs: &[ArrayD<T>],
        onehot: &Array2<T>,
        lambda: f64,
        step_seed: u64,
    ) -> Result<T> {
        self.zero_grad();
        let logits = self.forward(inputs, Mode::Train, step_seed)?;
        let (loss, dlogits) = softmax_xent_loss(&logits, onehot, self.params(), lambda)?;
        self.backward(&dlogits)?;
        self.add_l2_grad(lambda);
        Ok(loss)
    }

    /// One optimization step on a batch; returns the pre-update loss.
    pub fn train_step(
        &mut self,
        inputs: &[ArrayD<T>],
        onehot: &Array2<T>,
        lambda: f64,
        adam: &mut Adam,
        step_seed: u64,
    ) -> Result<T> {
        let loss = self.loss_and_grad(inputs, onehot, lambda, step_seed)?;
        adam.step(self.params_mut());
        Ok(loss)
    }

    /// Class probabilities in inference mode.
    pub fn predict_proba(&mut self, inputs: &[ArrayD<T>]) -> Result<Array2<T>> {
        Ok(softmax(&self.forward(inputs, Mode::Infer, 0)?))
    }

    /// Loss in train mode without touching gradients. Batch-norm running
    /// statistics still update.
    pub fn train_loss(
        &mut self,
        inputs: &[ArrayD<T>],
        onehot: &Array2<T>,
        lambda: f64,
        step_seed: u64,
    ) -> Result<T> {
        let logits = self.forward(inputs, Mode::Train, step_seed)?;
        Ok(softmax_xent_loss(&logits, onehot, self.params(), lambda)?.0)
    }

    /// Hash of the ReLU activity pattern and max-pool selections of the last
    /// forward pass. Two passes with equal signatures went through the same
    /// linear piece of the network.
    pub fn kink_signature(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325;
        for b in &self.branches {
            b.fold_kinks(&mut acc);
        }
        self.head.fold_kinks(&mut acc);
        acc
    }
}
