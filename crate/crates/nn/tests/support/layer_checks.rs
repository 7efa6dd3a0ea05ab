//! Finite-difference checks of every layer's backward pass, shared by the
//! gradient tests of this crate and by the acceptance suite.

#![allow(dead_code)]

use fog_nn::gradcheck::{check_function, check_network, GradCheckConfig};
use fog_nn::layers::activation::{relu_backward, relu_forward};
use fog_nn::layers::batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormConfig, BatchNormState,
};
use fog_nn::layers::conv::{conv2d_backward, conv2d_forward};
use fog_nn::layers::dense::{dense_backward, dense_forward};
use fog_nn::layers::dropout::dropout;
use fog_nn::layers::pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2x2_backward, maxpool2x2_forward,
};
use fog_nn::{BranchSpec, GradCheckReport, LayerSpec, Mode, Network, NetworkSpec};
use ndarray::{Array, Array2, ArrayD, Ix1, Ix2, Ix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the checked gradient and its report.
pub type Report = (&'static str, GradCheckReport);

pub fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    Array::from_shape_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn with(base: &ArrayD<f64>, flat: &[f64]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(base.shape().to_vec(), flat.to_vec()).unwrap()
}

fn flat(a: &ArrayD<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

pub fn conv2d_reports(seed: u64) -> Vec<Report> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_arr(&[2, 4, 4, 3], &mut rng);
        let k = rand_arr(&[3, 3, 3, 4], &mut rng);
        let b = rand_arr(&[4], &mut rng);
        let r = rand_arr(&[2, 4, 4, 4], &mut rng);
        let fwd = |x: &ArrayD<f64>, k: &ArrayD<f64>, b: &ArrayD<f64>| {
            let (y, _) = conv2d_forward(
                x.view().into_dimensionality::<Ix4>().unwrap(),
                k.view().into_dimensionality::<Ix4>().unwrap(),
                b.view().into_dimensionality::<Ix1>().unwrap(),
            )
            .unwrap();
            dot(&y.into_dyn(), &r)
        };
        let (_, cache) = conv2d_forward(
            x.view().into_dimensionality::<Ix4>().unwrap(),
            k.view().into_dimensionality::<Ix4>().unwrap(),
            b.view().into_dimensionality::<Ix1>().unwrap(),
        )
        .unwrap();
        let (dx, dk, db) = conv2d_backward(
            r.view().into_dimensionality::<Ix4>().unwrap(),
            &cache,
            k.view().into_dimensionality::<Ix4>().unwrap(),
        )
        .unwrap();
        let rx = check_function(
            |v| fwd(&with(&x, v), &k, &b),
            &flat(&x),
            &flat(&dx.into_dyn()),
            &cfg,
        );
        let rk = check_function(
            |v| fwd(&x, &with(&k, v), &b),
            &flat(&k),
            &flat(&dk.into_dyn()),
            &cfg,
        );
        let rb = check_function(
            |v| fwd(&x, &k, &with(&b, v)),
            &flat(&b),
            &flat(&db.into_dyn()),
            &cfg,
        );
        out.push(("conv dx", rx));
        out.push(("conv dk", rk));
        out.push(("conv db", rb));
    }
    out
}

pub fn batchnorm_reports(seed: u64) -> Vec<Report> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    for mode in [Mode::Train, Mode::Infer] {
        {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = rand_arr(&[4, 2, 2, 3], &mut rng);
            let gamma = rand_arr(&[3], &mut rng).mapv(|v| v + 1.5);
            let beta = rand_arr(&[3], &mut rng);
            let r = rand_arr(&[4, 2, 2, 3], &mut rng);
            let fwd = |x: &ArrayD<f64>, g: &[f64], b: &[f64]| {
                let (mut rm, mut rv) = (vec![0.1; 3], vec![0.8; 3]);
                let state = BatchNormState {
                    gamma: g,
                    beta: b,
                    running_mean: &mut rm,
                    running_var: &mut rv,
                };
                let (y, _) = batchnorm_forward(x, state, mode, BatchNormConfig::default()).unwrap();
                dot(&y, &r)
            };
            let (g, b) = (flat(&gamma), flat(&beta));
            let (mut rm, mut rv) = (vec![0.1; 3], vec![0.8; 3]);
            let state = BatchNormState {
                gamma: &g,
                beta: &b,
                running_mean: &mut rm,
                running_var: &mut rv,
            };
            let (_, cache) =
                batchnorm_forward(&x, state, mode, BatchNormConfig::default()).unwrap();
            let (dx, dg, db) = batchnorm_backward(&r, &cache, &g).unwrap();
            let rx = check_function(|v| fwd(&with(&x, v), &g, &b), &flat(&x), &flat(&dx), &cfg);
            let rg = check_function(|v| fwd(&x, v, &b), &g, &dg, &cfg);
            let rb = check_function(|v| fwd(&x, &g, v), &b, &db, &cfg);
            out.push(("batchnorm dx", rx));
            out.push(("batchnorm dgamma", rg));
            out.push(("batchnorm dbeta", rb));
        }
    }
    out
}

pub fn pooling_reports(seed: u64) -> Vec<Report> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        // Well-separated values so the perturbation never changes an argmax.
        let mut values: Vec<f64> = (0..2 * 4 * 4 * 3).map(|i| i as f64 * 0.01).collect();
        for i in (1..values.len()).rev() {
            values.swap(i, rng.gen_range(0..=i));
        }
        let x = ArrayD::from_shape_vec(vec![2, 4, 4, 3], values).unwrap();
        let r = rand_arr(&[2, 2, 2, 3], &mut rng);
        let fwd = |x: &ArrayD<f64>| {
            let (y, _) =
                maxpool2x2_forward(x.view().into_dimensionality::<Ix4>().unwrap()).unwrap();
            dot(&y.into_dyn(), &r)
        };
        let (_, cache) =
            maxpool2x2_forward(x.view().into_dimensionality::<Ix4>().unwrap()).unwrap();
        let dx =
            maxpool2x2_backward(r.view().into_dimensionality::<Ix4>().unwrap(), &cache).unwrap();
        out.push((
            "maxpool dx",
            check_function(
                |v| fwd(&with(&x, v)),
                &flat(&x),
                &flat(&dx.into_dyn()),
                &cfg,
            ),
        ));

        let x = rand_arr(&[2, 4, 2, 3], &mut rng);
        let r = rand_arr(&[2, 3], &mut rng);
        let fwd = |x: &ArrayD<f64>| {
            dot(
                &global_avg_pool(x.view().into_dimensionality::<Ix4>().unwrap()).into_dyn(),
                &r,
            )
        };
        let dx =
            global_avg_pool_backward(r.view().into_dimensionality::<Ix2>().unwrap(), [2, 4, 2, 3])
                .unwrap();
        out.push((
            "gap dx",
            check_function(
                |v| fwd(&with(&x, v)),
                &flat(&x),
                &flat(&dx.into_dyn()),
                &cfg,
            ),
        ));
    }
    out
}

pub fn dense_relu_dropout_reports(seed: u64) -> Vec<Report> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = rand_arr(&[3, 5], &mut rng);
        let w = rand_arr(&[5, 4], &mut rng);
        let b = rand_arr(&[4], &mut rng);
        let r = rand_arr(&[3, 4], &mut rng);
        let fwd = |x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>| {
            let y = dense_forward(
                x.view().into_dimensionality::<Ix2>().unwrap(),
                w.view().into_dimensionality::<Ix2>().unwrap(),
                b.view().into_dimensionality::<Ix1>().unwrap(),
            )
            .unwrap();
            dot(&y.into_dyn(), &r)
        };
        let (dx, dw, db) = dense_backward(
            r.view().into_dimensionality::<Ix2>().unwrap(),
            x.view().into_dimensionality::<Ix2>().unwrap(),
            w.view().into_dimensionality::<Ix2>().unwrap(),
        )
        .unwrap();
        out.push((
            "dense dx",
            check_function(
                |v| fwd(&with(&x, v), &w, &b),
                &flat(&x),
                &flat(&dx.into_dyn()),
                &cfg,
            ),
        ));
        out.push((
            "dense dw",
            check_function(
                |v| fwd(&x, &with(&w, v), &b),
                &flat(&w),
                &flat(&dw.into_dyn()),
                &cfg,
            ),
        ));
        out.push((
            "dense db",
            check_function(
                |v| fwd(&x, &w, &with(&b, v)),
                &flat(&b),
                &flat(&db.into_dyn()),
                &cfg,
            ),
        ));

        // keep inputs away from the kink at zero
        let x =
            rand_arr(&[4, 6], &mut rng).mapv(|v| if v.abs() < 0.05 { v.signum() * 0.5 } else { v });
        let r = rand_arr(&[4, 6], &mut rng);
        let dx = relu_backward(&r, &x).unwrap();
        let report = check_function(
            |v| dot(&relu_forward(&with(&x, v)), &r),
            &flat(&x),
            &flat(&dx),
            &cfg,
        );
        out.push(("relu dx", report));

        let mut layer = fog_nn::layers::Dropout::new("drop", 0.4).unwrap();
        layer.forward(&x, Mode::Train, seed).unwrap();
        let dx = layer.backward(&r).unwrap();
        let f = |v: &[f64]| {
            let mut l = fog_nn::layers::Dropout::new("drop", 0.4).unwrap();
            dot(&l.forward(&with(&x, v), Mode::Train, seed).unwrap(), &r)
        };
        out.push(("dropout dx", check_function(f, &flat(&x), &flat(&dx), &cfg)));
        let (_, mask) = dropout(&x, 0.4, seed, Mode::Train).unwrap();
        assert!(mask.is_some());
    }
    out
}

/// Every per-layer check for one seed.
pub fn all_layer_reports(seed: u64) -> Vec<Report> {
    let mut out = conv2d_reports(seed);
    out.extend(batchnorm_reports(seed));
    out.extend(pooling_reports(seed));
    out.extend(dense_relu_dropout_reports(seed));
    out
}

fn block(filters: usize, rate: f64, l2: bool) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { filters, l2 },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Dropout { rate },
    ]
}

pub fn small_network_spec() -> NetworkSpec {
    let mut layers = block(4, 0.2, false);
    layers.extend(block(6, 0.2, true));
    layers.push(LayerSpec::GlobalAvgPool);
    NetworkSpec {
        branches: vec![BranchSpec {
            name: "branch".into(),
            in_channels: 3,
            layers,
        }],
        head: vec![
            LayerSpec::Dense { units: 5, l2: true },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.4 },
            LayerSpec::Dense {
                units: 2,
                l2: false,
            },
            LayerSpec::Softmax,
        ],
    }
}

/// Full check of a one-branch network with two conv blocks and a dense
/// head on 8x8 inputs.
pub fn small_network_report(seed: u64) -> GradCheckReport {
    let cfg = GradCheckConfig::default();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut net = Network::<f64>::build(&small_network_spec(), seed).unwrap();
        let x = rand_arr(&[3, 8, 8, 3], &mut rng);
        let onehot = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        check_network(&mut net, &[x], &onehot, 0.001, seed, &cfg).unwrap()
    }
}
