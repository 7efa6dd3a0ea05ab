//! The multi-branch GASF classifier and its training loop.
//!
//! Each configured channel gets a branch of three conv blocks
//! (conv 3x3, batch norm, ReLU, 2x2 max pool, dropout) with 32, 64 and 128
//! filters followed by global average pooling. Branch features are
//! concatenated and classified by dense 128 -> dense 64 -> dense 2.

use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use fog_nn::seed::{derive_seed, rng_for};
use fog_nn::{
    Adam, AdamConfig, BranchSpec, LayerSpec, Mode, Network, NetworkSpec, NnError, ParamSet, Scalar,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::channel::{format_channel_list, Channel};
use crate::dataset::{GafDataset, INPUT_PLANES};
use crate::eval::{window_metrics, EvalError, EvalReport};

pub const FILTER_LADDER: [usize; 3] = [32, 64, 128];
pub const BLOCK_DROPOUT: [f64; 3] = [0.2, 0.2, 0.4];
pub const HEAD_UNITS: [usize; 2] = [128, 64];
pub const HEAD_DROPOUT: [f64; 2] = [0.4, 0.2];
pub const NUM_CLASSES: usize = 2;
pub const DEFAULT_L2: f64 = 0.001;
pub const DEFAULT_EPOCHS: usize = 60;
pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("no training window carries all of the channels {0}")]
    EmptyTrainingSet(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// One branch per entry, in this order.
    pub channels: Vec<Channel>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(channels: Vec<Channel>, seed: u64) -> Self {
        Self {
            channels,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            learning_rate: AdamConfig::default().learning_rate,
            l2_lambda: DEFAULT_L2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.channels.is_empty() || self.channels.len() > 3 {
            return bad(format!(
                "expected 1 to 3 channels, got {}",
                self.channels.len()
            ));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return bad(format!("channel {c} listed twice"));
            }
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is below 2", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("L2 lambda {} must be non-negative", self.l2_lambda));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Short identifier such as `AccV+AccAP`, used for file names.
    pub fn tag(&self) -> String {
        self.channels
            .iter()
            .map(|c| c.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Layer description of the classifier for `cfg`.
pub fn network_spec(cfg: &ModelConfig) -> Result<NetworkSpec, ModelError> {
    cfg.validate()?;
    let mut branch_layers = Vec::new();
    for (i, (&filters, &rate)) in FILTER_LADDER.iter().zip(&BLOCK_DROPOUT).enumerate() {
        branch_layers.extend([
            LayerSpec::Conv2d { filters, l2: i > 0 },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Dropout { rate },
        ]);
    }
    branch_layers.push(LayerSpec::GlobalAvgPool);
    let branches = cfg
        .channels
        .iter()
        .map(|c| BranchSpec {
            name: c.name().to_string(),
            in_channels: INPUT_PLANES,
            layers: branch_layers.clone(),
        })
        .collect();
    let head = vec![
        LayerSpec::Dense {
            units: HEAD_UNITS[0],
            l2: true,
        },
        LayerSpec::Relu,
        LayerSpec::Dropout {
            rate: HEAD_DROPOUT[0],
        },
        LayerSpec::Dense {
            units: HEAD_UNITS[1],
            l2: false,
        },
        LayerSpec::Relu,
        LayerSpec::Dropout {
            rate: HEAD_DROPOUT[1],
        },
        LayerSpec::Dense {
            units: NUM_CLASSES,
            l2: false,
        },
        LayerSpec::Softmax,
    ];
    Ok(NetworkSpec { branches, head })
}

/// Builds and initializes the network for `cfg` from `cfg.seed`.
pub fn build_graph<T: Scalar>(cfg: &ModelConfig) -> Result<Network<T>, ModelError> {
    Ok(Network::build(&network_spec(cfg)?, cfg.seed)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss including the L2 penalty.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_f1: Option<f64>,
    pub seconds: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `epoch,train_loss,val_accuracy,val_f1`; undefined metrics are `NA`.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy,val_f1\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.train_loss,
            fmt_opt(r.val_accuracy),
            fmt_opt(r.val_f1)
        );
    }
    out
}

/// `epoch,seconds`. Kept apart from the history so that the history is
/// reproducible byte for byte.
pub fn timing_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,seconds\n");
    for r in records {
        let _ = writeln!(out, "{},{}", r.epoch, r.seconds);
    }
    out
}

fn onehot(data: &GafDataset, indices: &[usize]) -> Array2<f32> {
    let mut y = Array2::zeros((indices.len(), NUM_CLASSES));
    for (b, &i) in indices.iter().enumerate() {
        y[[b, usize::from(data.samples[i].label)]] = 1.0;
    }
    y
}

/// Runs `epochs` (0-based epoch numbers) over the usable samples of `train`
/// with a fresh Adam state. The shuffle and dropout streams are keyed by
/// `(cfg.seed, stream, epoch)`, so a run split over several calls with the
/// same stream sees the same batches as one uninterrupted call, apart from
/// the optimizer restart.
///
/// Samples lacking one of the configured channels are skipped; a trailing
/// batch of one sample is dropped because batch norm needs two.
pub fn fit(
    net: &mut Network<f32>,
    cfg: &ModelConfig,
    train: &GafDataset,
    epochs: Range<usize>,
    stream: u64,
    val: Option<&GafDataset>,
) -> Result<Vec<EpochRecord>, ModelError> {
    cfg.validate()?;
    let usable = train.usable_indices(&cfg.channels);
    if usable.len() < 2 {
        return Err(ModelError::EmptyTrainingSet(format_channel_list(
            &cfg.channels,
        )));
    }
    let mut adam = Adam::new(cfg.adam());
    net.reset_optimizer_state();
    let mut records = Vec::with_capacity(epochs.len());
    for epoch in epochs {
        let started = Instant::now();
        let mut order = usable.clone();
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", &[stream, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let x = train.batch_inputs(batch, &cfg.channels);
            let y = onehot(train, batch);
            let step_seed = derive_seed(cfg.seed, "dropout", &[stream, epoch as u64, b as u64]);
            let loss = net.train_step(&x, &y, cfg.l2_lambda, &mut adam, step_seed)?;
            loss_sum += f64::from(loss) * batch.len() as f64;
            seen += batch.len();
        }
        let (val_accuracy, val_f1) = match val {
            Some(v) => {
                let report = evaluate_windows(net, cfg, v)?;
                (report.and_then(|r| r.accuracy), report.and_then(|r| r.f1))
            }
            None => (None, None),
        };
        records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            val_accuracy,
            val_f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

/// FOG probability for each sample at `indices`, in inference mode.
pub fn predict_proba(
    net: &mut Network<f32>,
    channels: &[Channel],
    data: &GafDataset,
    indices: &[usize],
) -> Result<Vec<f32>, ModelError> {
    let mut out = Vec::with_capacity(indices.len());
    for batch in indices.chunks(DEFAULT_BATCH) {
        let p = net.predict_proba(&data.batch_inputs(batch, channels))?;
        out.extend(p.column(1).iter().copied());
    }
    Ok(out)
}

/// Predicted class (1 = FOG when its probability exceeds one half).
pub fn predict(
    net: &mut Network<f32>,
    channels: &[Channel],
    data: &GafDataset,
    indices: &[usize],
) -> Result<Vec<u8>, ModelError> {
    Ok(predict_proba(net, channels, data, indices)?
        .into_iter()
        .map(|p| u8::from(p > 0.5))
        .collect())
}

/// Window-level report over the samples of `data` that carry every
/// configured channel; `None` when there are none.
pub fn evaluate_windows(
    net: &mut Network<f32>,
    cfg: &ModelConfig,
    data: &GafDataset,
) -> Result<Option<EvalReport>, ModelError> {
    let idx = data.usable_indices(&cfg.channels);
    if idx.is_empty() {
        return Ok(None);
    }
    let preds = predict(net, &cfg.channels, data, &idx)?;
    let labels: Vec<u8> = idx.iter().map(|&i| data.samples[i].label).collect();
    Ok(Some(window_metrics(&preds, &labels)?))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelMetadata {
    pub epochs_trained: usize,
    pub val_accuracy: Option<f64>,
    pub val_f1: Option<f64>,
    /// Filled in by evaluation.
    pub test_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub metadata: ModelMetadata,
}

impl TrainedModel {
    pub fn from_network(config: ModelConfig, net: &Network<f32>, metadata: ModelMetadata) -> Self {
        Self {
            config,
            params: net.param_set(),
            metadata,
        }
    }

    /// Rebuilds the network and loads the stored parameters.
    pub fn network(&self) -> Result<Network<f32>, ModelError> {
        let mut net = build_graph::<f32>(&self.config)?;
        net.load_param_set(&self.params)?;
        Ok(net)
    }

    pub fn channels(&self) -> &[Channel] {
        &self.config.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub model: TrainedModel,
    pub history: Vec<EpochRecord>,
}

/// Trains a freshly initialized network for `cfg.epochs` epochs.
pub fn train(
    cfg: &ModelConfig,
    train: &GafDataset,
    val: Option<&GafDataset>,
) -> Result<TrainingRun, ModelError> {
    let mut net = build_graph::<f32>(cfg)?;
    let history = fit(&mut net, cfg, train, 0..cfg.epochs, 0, val)?;
    let last = history.last();
    let metadata = ModelMetadata {
        epochs_trained: cfg.epochs,
        val_accuracy: last.and_then(|r| r.val_accuracy),
        val_f1: last.and_then(|r| r.val_f1),
        test_f1: None,
    };
    Ok(TrainingRun {
        model: TrainedModel::from_network(cfg.clone(), &net, metadata),
        history,
    })
}

/// Logits of a forward pass in inference mode; used to check determinism.
pub fn infer_logits(
    net: &mut Network<f32>,
    inputs: &[ndarray::ArrayD<f32>],
) -> Result<Array2<f32>, ModelError> {
    Ok(net.forward(inputs, Mode::Infer, 0)?)
}
