//! FedAvg algebra and the federated/centralized equivalences.

mod common;

use common::synthetic_images;
use fog_core::channel::Channel;
use fog_core::federated::{
    fedavg, local_update, partition_clients, run_rounds, ClientSeeding, ClientShard, ClientUpdate,
    RoundConfig,
};
use fog_core::model::{build_graph, train, ModelConfig};
use fog_core::windowing::SplitTag;
use fog_nn::ParamSet;

fn config(epochs: usize) -> ModelConfig {
    ModelConfig {
        epochs,
        batch_size: 8,
        ..ModelConfig::new(vec![Channel::AccV], 31)
    }
}

fn rounds(
    num_clients: usize,
    local_epochs: usize,
    rounds: usize,
    seeding: ClientSeeding,
) -> RoundConfig {
    RoundConfig {
        num_clients,
        local_epochs,
        rounds,
        seed: 8,
        seeding,
    }
}

#[test]
fn one_client_is_bit_identical_to_centralized() {
    let data = synthetic_images(30, 3, 1, SplitTag::Train);
    let cfg = config(2);
    let central = train(&cfg, &data, None).unwrap();
    let shards = partition_clients(&data, 1, 99).unwrap();
    assert_eq!(shards[0].data, data);
    let init = build_graph::<f32>(&cfg).unwrap().param_set();
    let run = run_rounds(
        &rounds(1, 2, 1, ClientSeeding::PerClient),
        &cfg,
        &shards,
        init.clone(),
        None,
    )
    .unwrap();
    assert_eq!(run.global, central.model.params);

    let update = local_update(&init, &cfg, &shards[0], 2, 0, ClientSeeding::PerClient).unwrap();
    assert_eq!(run.global, update.params);
    assert_eq!(run.history.len(), 1);
    assert_eq!(run.history[0].local_loss, update.local_loss);
}

#[test]
fn duplicated_shards_average_to_any_client() {
    let data = synthetic_images(16, 2, 2, SplitTag::Train);
    let cfg = config(1);
    let shards: Vec<ClientShard> = (0..3)
        .map(|client_id| ClientShard {
            client_id,
            subjects: vec!["all".into()],
            data: data.clone(),
        })
        .collect();
    let init = build_graph::<f32>(&cfg).unwrap().param_set();
    let run = run_rounds(
        &rounds(3, 1, 2, ClientSeeding::Shared),
        &cfg,
        &shards,
        init.clone(),
        None,
    )
    .unwrap();

    let mut expected = init;
    for round in 0..2 {
        expected = local_update(&expected, &cfg, &shards[1], 1, round, ClientSeeding::Shared)
            .unwrap()
            .params;
    }
    assert_eq!(run.global, expected);
}

#[test]
fn rounds_do_not_depend_on_pool_size() {
    let data = synthetic_images(24, 4, 3, SplitTag::Train);
    let val = synthetic_images(8, 2, 4, SplitTag::Val);
    let cfg = config(1);
    let shards = partition_clients(&data, 2, 5).unwrap();
    let init = build_graph::<f32>(&cfg).unwrap().param_set();
    let rc = rounds(2, 1, 2, ClientSeeding::PerClient);
    let go = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_rounds(&rc, &cfg, &shards, init.clone(), Some(&val)).unwrap())
    };
    let a = go(1);
    let b = go(3);
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 4);
    assert_eq!(
        a.history.iter().map(|r| r.round).collect::<Vec<_>>(),
        vec![1, 1, 2, 2]
    );
}

fn f64_update(client_id: usize, n_k: f64, seed: u64) -> ClientUpdate<f64> {
    let cfg = ModelConfig::new(vec![Channel::AccML], seed);
    ClientUpdate {
        client_id,
        params: build_graph::<f64>(&cfg).unwrap().param_set(),
        n_k,
        local_loss: None,
    }
}

fn oracle(updates: &[ClientUpdate<f64>]) -> Vec<Vec<f64>> {
    let total: f64 = updates.iter().map(|u| u.n_k).sum();
    let tensors: Vec<Vec<&fog_nn::NamedTensor<f64>>> =
        updates.iter().map(|u| u.params.iter().collect()).collect();
    (0..tensors[0].len())
        .map(|t| {
            let len = tensors[0][t].values.len();
            let mut out = vec![0.0; len];
            for (i, o) in out.iter_mut().enumerate() {
                for (k, u) in updates.iter().enumerate() {
                    *o += u.n_k * tensors[k][t].values.as_slice().unwrap()[i];
                }
                *o /= total;
            }
            out
        })
        .collect()
}

fn flat(p: &ParamSet<f64>) -> Vec<Vec<f64>> {
    p.iter()
        .map(|t| t.values.iter().copied().collect())
        .collect()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fedavg_matches_weighted_mean_oracle() {
    let updates = vec![
        f64_update(0, 1.0, 10),
        f64_update(1, 2.0, 11),
        f64_update(2, 3.0, 12),
    ];
    let out = fedavg(&updates).unwrap();
    assert!(max_diff(&flat(&out), &oracle(&updates)) < 1e-12);

    for c in [0.001, 0.5, 7.0, 1e6] {
        let scaled: Vec<_> = updates
            .iter()
            .map(|u| ClientUpdate {
                n_k: u.n_k * c,
                ..u.clone()
            })
            .collect();
        assert!(max_diff(&flat(&fedavg(&scaled).unwrap()), &flat(&out)) < 1e-12);
    }

    let permuted = vec![updates[2].clone(), updates[0].clone(), updates[1].clone()];
    assert_eq!(fedavg(&permuted).unwrap(), out);

    for (t, tensor) in out.iter().enumerate() {
        for (i, v) in tensor.values.iter().enumerate() {
            let client = |k: usize| {
                updates[k]
                    .params
                    .iter()
                    .nth(t)
                    .unwrap()
                    .values
                    .as_slice()
                    .unwrap()[i]
            };
            let (lo, hi) = (0..3)
                .map(client)
                .fold((f64::MAX, f64::MIN), |(l, h), x| (l.min(x), h.max(x)));
            assert!(lo <= *v && *v <= hi);
        }
    }
}

#[test]
fn fedavg_on_single_precision_weights() {
    let cfg = ModelConfig::new(vec![Channel::AccV], 0);
    let updates: Vec<ClientUpdate<f32>> = (0..3)
        .map(|k| ClientUpdate {
            client_id: k,
            params: build_graph::<f32>(&ModelConfig {
                seed: 40 + k as u64,
                ..cfg.clone()
            })
            .unwrap()
            .param_set(),
            n_k: (k + 1) as f64,
            local_loss: None,
        })
        .collect();
    let out = fedavg(&updates).unwrap();
    for (t, tensor) in out.iter().enumerate() {
        for (i, v) in tensor.values.iter().enumerate() {
            let want: f64 = (0..3)
                .map(|k| {
                    (k + 1) as f64
                        * f64::from(
                            updates[k]
                                .params
                                .iter()
                                .nth(t)
                                .unwrap()
                                .values
                                .as_slice()
                                .unwrap()[i],
                        )
                })
                .sum::<f64>()
                / 6.0;
            assert!(
                (f64::from(*v) - want).abs() <= 1e-7 * want.abs().max(1e-30),
                "{v} vs {want}"
            );
        }
    }
}

#[test]
fn opposite_weights_cancel() {
    let a = f64_update(0, 4.0, 13);
    let mut neg = a.params.clone();
    neg.iter_mut().for_each(|t| t.values.mapv_inplace(|v| -v));
    let b = ClientUpdate {
        client_id: 1,
        params: neg,
        n_k: 4.0,
        local_loss: None,
    };
    let out = fedavg(&[a, b]).unwrap();
    assert!(out.iter().all(|t| t.values.iter().all(|&v| v == 0.0)));
}
