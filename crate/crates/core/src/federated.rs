//! Simulated federated training with weighted averaging (FedAvg).
//!
//! Subjects are dealt to clients, every client trains a copy of the global
//! model on its shard for a few local epochs, and the copies are averaged
//! with weights proportional to the clients' window counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use fog_nn::seed::rng_for;
use fog_nn::{NamedTensor, ParamSet, Scalar};
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::GafDataset;
use crate::eval::fmt_metric;
use crate::model::{build_graph, evaluate_windows, fit, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum FederatedError {
    #[error("{subjects} subjects cannot fill {clients} clients")]
    TooFewSubjects { subjects: usize, clients: usize },
    #[error("invalid federated configuration: {0}")]
    BadConfig(String),
    #[error("client {0} has no usable training windows")]
    EmptyShard(usize),
    #[error("no client updates to aggregate")]
    EmptyUpdateList,
    #[error("client {client}: {reason}")]
    ShapeMismatch { client: usize, reason: String },
    #[error("client {client} has weight {weight}; weights must be positive and finite")]
    BadWeight { client: usize, weight: f64 },
    #[error("client {0} submitted more than one update")]
    DuplicateClient(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How each client's shuffle and dropout streams are keyed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClientSeeding {
    /// Stream = client id, so clients draw different batch orders. Client
    /// 0 draws the same stream as centralized training.
    #[default]
    PerClient,
    /// Every client uses stream 0.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundConfig {
    pub num_clients: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub seed: u64,
    pub seeding: ClientSeeding,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            num_clients: 5,
            local_epochs: 2,
            rounds: 30,
            seed: 0,
            seeding: ClientSeeding::PerClient,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        if self.num_clients == 0 {
            return Err(FederatedError::BadConfig(
                "at least one client is required".into(),
            ));
        }
        if self.rounds == 0 {
            return Err(FederatedError::BadConfig(
                "at least one round is required".into(),
            ));
        }
        if self.local_epochs == 0 {
            return Err(FederatedError::BadConfig(
                "local epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub subjects: Vec<String>,
    pub data: GafDataset,
}

impl ClientShard {
    /// Number of windows held by the client.
    pub fn n_k(&self) -> usize {
        self.data.len()
    }
}

/// Shuffles the subjects with a stream derived from `seed` and deals them
/// round-robin into `k` shards.
pub fn partition_clients(
    data: &GafDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<ClientShard>, FederatedError> {
    if k == 0 {
        return Err(FederatedError::BadConfig(
            "at least one client is required".into(),
        ));
    }
    let registry: BTreeSet<&str> = data.samples.iter().map(|s| s.subject_id.as_str()).collect();
    if registry.len() < k {
        return Err(FederatedError::TooFewSubjects {
            subjects: registry.len(),
            clients: k,
        });
    }
    let mut subjects: Vec<&str> = registry.into_iter().collect();
    subjects.shuffle(&mut rng_for(seed, "clients", &[]));
    let mut owned: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, s) in subjects.iter().enumerate() {
        owned[i % k].push(s.to_string());
    }
    Ok(owned
        .into_iter()
        .enumerate()
        .map(|(client_id, mut subjects)| {
            subjects.sort();
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| subjects.binary_search(&data.samples[i].subject_id).is_ok())
                .collect();
            ClientShard {
                client_id,
                subjects,
                data: data.subset(&idx),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub params: ParamSet<T>,
    /// Aggregation weight, normally the client's window count.
    pub n_k: f64,
    /// Mean training loss of the last local epoch.
    pub local_loss: Option<f64>,
}

/// Trains a copy of `global` on the shard for `local_epochs` epochs. The
/// epochs are numbered from `round * local_epochs`, so consecutive rounds
/// continue the shard's shuffle sequence. Optimizer state starts fresh.
pub fn local_update(
    global: &ParamSet<f32>,
    cfg: &ModelConfig,
    shard: &ClientShard,
    local_epochs: usize,
    round: usize,
    seeding: ClientSeeding,
) -> Result<ClientUpdate<f32>, FederatedError> {
    if shard.data.usable_indices(&cfg.channels).len() < 2 {
        return Err(FederatedError::EmptyShard(shard.client_id));
    }
    let mut net = build_graph::<f32>(cfg)?;
    net.load_param_set(global)
        .map_err(|e| FederatedError::ShapeMismatch {
            client: shard.client_id,
            reason: e.to_string(),
        })?;
    let stream = match seeding {
        ClientSeeding::PerClient => shard.client_id as u64,
        ClientSeeding::Shared => 0,
    };
    let first = round * local_epochs;
    let history = fit(
        &mut net,
        cfg,
        &shard.data,
        first..first + local_epochs,
        stream,
        None,
    )?;
    Ok(ClientUpdate {
        client_id: shard.client_id,
        params: net.param_set(),
        n_k: shard.n_k() as f64,
        local_loss: history.last().map(|r| r.train_loss),
    })
}

/// Weighted element-wise mean `sum_k (n_k / n) w_k`, accumulated in `f64`
/// in ascending client order. Each result is clamped to the range of the
/// client values, which it lies in exactly before rounding.
pub fn fedavg<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<ParamSet<T>, FederatedError> {
    let mut order: Vec<&ClientUpdate<T>> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let first = *order.first().ok_or(FederatedError::EmptyUpdateList)?;
    for pair in order.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(FederatedError::DuplicateClient(pair[0].client_id));
        }
    }
    for u in &order {
        if !(u.n_k > 0.0 && u.n_k.is_finite()) {
            return Err(FederatedError::BadWeight {
                client: u.client_id,
                weight: u.n_k,
            });
        }
        first
            .params
            .check_compatible(&u.params)
            .map_err(|e| FederatedError::ShapeMismatch {
                client: u.client_id,
                reason: e.to_string(),
            })?;
    }
    let total: f64 = order.iter().map(|u| u.n_k).sum();
    let shares: Vec<f64> = order.iter().map(|u| u.n_k / total).collect();
    let tensors = first
        .params
        .iter()
        .enumerate()
        .map(|(t, proto)| {
            let views: Vec<&ArrayD<T>> = order
                .iter()
                .map(|u| &u.params.iter().nth(t).expect("compatible").values)
                .collect();
            let mut acc = vec![0.0f64; proto.values.len()];
            let mut lo = vec![f64::INFINITY; proto.values.len()];
            let mut hi = vec![f64::NEG_INFINITY; proto.values.len()];
            for (v, &p) in views.iter().zip(&shares) {
                for (i, x) in v.iter().enumerate() {
                    let x = x.as_f64();
                    acc[i] += p * x;
                    lo[i] = lo[i].min(x);
                    hi[i] = hi[i].max(x);
                }
            }
            let values = acc
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(&a, (&l, &h))| T::of(a.clamp(l, h)))
                .collect();
            NamedTensor {
                name: proto.name.clone(),
                values: ArrayD::from_shape_vec(proto.values.raw_dim(), values)
                    .expect("same length"),
            }
        })
        .collect();
    Ok(ParamSet::new(tensors))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub client_id: usize,
    pub n_k: usize,
    pub local_loss: Option<f64>,
    pub global_val_f1: Option<f64>,
}

/// `round,client_id,n_k,local_loss,global_val_f1`.
pub fn round_history_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from("round,client_id,n_k,local_loss,global_val_f1\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.round,
            r.client_id,
            r.n_k,
            fmt_metric(r.local_loss),
            fmt_metric(r.global_val_f1)
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedRun {
    pub global: ParamSet<f32>,
    pub history: Vec<RoundRecord>,
    /// Validation accuracy of the final global model.
    pub val_accuracy: Option<f64>,
    pub val_f1: Option<f64>,
}

/// Broadcast, local training and aggregation for `cfg.rounds` rounds. The
/// clients of a round train in parallel on the current rayon pool; the
/// result does not depend on the pool size.
pub fn run_rounds(
    cfg: &RoundConfig,
    model_cfg: &ModelConfig,
    shards: &[ClientShard],
    init: ParamSet<f32>,
    val: Option<&GafDataset>,
) -> Result<FederatedRun, FederatedError> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(FederatedError::EmptyUpdateList);
    }
    let mut global = init;
    let mut history = Vec::with_capacity(cfg.rounds * shards.len());
    let mut last_val = (None, None);
    for round in 0..cfg.rounds {
        let updates = shards
            .par_iter()
            .map(|s| local_update(&global, model_cfg, s, cfg.local_epochs, round, cfg.seeding))
            .collect::<Result<Vec<_>, _>>()?;
        global = fedavg(&updates)?;
        let report = match val {
            Some(v) => {
                let mut net = build_graph::<f32>(model_cfg)?;
                net.load_param_set(&global).map_err(ModelError::from)?;
                evaluate_windows(&mut net, model_cfg, v)?
            }
            None => None,
        };
        last_val = (report.and_then(|r| r.accuracy), report.and_then(|r| r.f1));
        for (u, s) in updates.iter().zip(shards) {
            history.push(RoundRecord {
                round: round + 1,
                client_id: u.client_id,
                n_k: s.n_k(),
                local_loss: u.local_loss,
                global_val_f1: last_val.1,
            });
        }
    }
    Ok(FederatedRun {
        global,
        history,
        val_accuracy: last_val.0,
        val_f1: last_val.1,
    })
}
