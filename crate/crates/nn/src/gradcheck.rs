//! Central finite-difference gradient checking (double precision).

use ndarray::{Array2, ArrayD};
use rand::seq::index::sample;

use crate::network::Network;
use crate::seed::rng_for;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so gradients that are zero
    /// on both sides compare by absolute error.
    pub floor: f64,
    /// Coordinates checked per parameter tensor; `None` checks all.
    pub coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or max-pool kink; the
    /// function is not differentiable there and they are excluded.
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `analytic` against central differences of `f` at `x`.
pub fn check_function<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut point = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        tolerance: cfg.tolerance,
    };
    for i in 0..x.len() {
        point[i] = x[i] + cfg.step;
        let plus = f(&point);
        point[i] = x[i] - cfg.step;
        let minus = f(&point);
        point[i] = x[i];
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let rel = relative_error(analytic[i], numeric, cfg.floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(("x".into(), i));
        }
    }
    report
}

/// Checks every trainable parameter of `net` (or a seeded sample of
/// coordinates per tensor) on the train-mode loss of one batch.
///
/// Dropout masks are pinned by `step_seed` and batch normalization uses the
/// batch statistics, so the loss is a deterministic function of the
/// weights. Parameter values and running statistics are restored
/// afterwards.
pub fn check_network(
    net: &mut Network<f64>,
    inputs: &[ArrayD<f64>],
    onehot: &Array2<f64>,
    lambda: f64,
    step_seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let snapshot = net.param_set();
    net.loss_and_grad(inputs, onehot, lambda, step_seed)?;
    let base_signature = net.kink_signature();
    let grads: Vec<(String, ArrayD<f64>, bool)> = net
        .params()
        .map(|p| (p.name.clone(), p.grad.clone(), p.trainable))
        .collect();

    let mut rng = rng_for(cfg.seed, "gradcheck", &[]);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        tolerance: cfg.tolerance,
    };
    for (tensor_idx, (name, grad, trainable)) in grads.iter().enumerate() {
        if !trainable {
            continue;
        }
        let len = grad.len();
        let coords: Vec<usize> = match cfg.coords_per_tensor {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let analytic = grad.as_slice().expect("contiguous gradient");
        for idx in coords {
            let mut eval = |delta: f64| -> Result<(f64, u64)> {
                let p = net.params_mut().nth(tensor_idx).expect("parameter index");
                let orig = p.value.as_slice().expect("contiguous")[idx];
                p.value.as_slice_mut().expect("contiguous")[idx] = orig + delta;
                let loss = net.train_loss(inputs, onehot, lambda, step_seed);
                let sig = net.kink_signature();
                let p = net.params_mut().nth(tensor_idx).expect("parameter index");
                p.value.as_slice_mut().expect("contiguous")[idx] = orig;
                Ok((loss?, sig))
            };
            let (plus, sig_plus) = eval(cfg.step)?;
            let (minus, sig_minus) = eval(-cfg.step)?;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel = relative_error(analytic[idx], numeric, cfg.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    net.load_param_set(&snapshot)?;
    Ok(report)
}
