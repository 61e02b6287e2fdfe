use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, TrainConfig};
use crate::diffusion::DiffusionSchedule;
use crate::env::{ActionMap, Environment};
use crate::error::{Error, Result};
use crate::nn::{Adam, NetInput, Network, StateFeatures};

/// Loss per optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupervisedReport {
    pub losses: Vec<f64>,
}

/// One shuffled pass of noise-prediction regression with `targets` as `x0`.
/// Appends the loss of every step and returns the pass mean.
pub(crate) fn noise_pass<R: Rng + ?Sized>(
    predictor: &mut Network,
    optimizer: &mut Adam,
    states: &[&StateFeatures],
    targets: &Array2<f64>,
    sched: &DiffusionSchedule,
    batch_size: usize,
    rng: &mut R,
    losses: &mut Vec<f64>,
) -> Result<f64> {
    let n = states.len();
    let k = targets.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in order.chunks(batch_size) {
        let b = batch.len();
        let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=sched.steps())).collect();
        let eps = Array2::from_shape_fn((b, k), |_| rng.sample::<f64, _>(StandardNormal));
        let mut x_t = Array2::zeros((b, k));
        for (row, (&i, &t)) in batch.iter().zip(&steps).enumerate() {
            let a = sched.alpha_bar(t);
            let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
            for j in 0..k {
                x_t[[row, j]] = sa * targets[[i, j]] + sn * eps[[row, j]];
            }
        }
        let batch_states: Vec<&StateFeatures> = batch.iter().map(|&i| states[i]).collect();
        let (eps_hat, tape) =
            predictor.forward_tape(&NetInput { states: batch_states, extra: Some(x_t.view()), steps: Some(&steps) })?;
        let diff = &eps_hat - &eps;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / b as f64;
        let d_out = diff * (2.0 / b as f64);
        let grads = predictor.backward(&tape, d_out.view());
        optimizer.step(predictor.params_mut(), &grads.params);
        losses.push(loss);
        total += loss;
        count += 1;
    }
    Ok(total / count.max(1) as f64)
}

/// Trains the noise predictor on labelled actions given in raw space.
pub fn train_supervised(
    predictor: &mut Network,
    data: &Dataset,
    labels: &[Vec<f64>],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<SupervisedReport> {
    data.require_nonempty()?;
    cfg.validate()?;
    if labels.len() != data.len() || labels.iter().any(|l| l.len() != data.n_users()) {
        return Err(Error::Shape(format!("expected {} labels of length {}", data.len(), data.n_users())));
    }
    let k = data.n_users();
    let targets = Array2::from_shape_fn((labels.len(), k), |(i, j)| labels[i][j]);
    let states = data.features();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.optimizer, predictor.param_count());
    let mut report = SupervisedReport::default();
    for epoch in 0..cfg.epochs {
        optimizer.set_learning_rate(cfg.learning_rate_at(epoch as f64 / cfg.epochs as f64));
        noise_pass(predictor, &mut optimizer, &states, &targets, sched, cfg.batch_size, &mut rng, &mut report.losses)?;
    }
    Ok(report)
}

/// Raw scores that the environment maps back to `powers`. Under the
/// normalized map the scale is fixed so that an equal split maps to zeros.
/// Results are clamped to `[-limit, limit]`, so zero powers come back small
/// but positive.
pub fn raw_from_powers(env: &Environment, powers: &[f64], limit: f64) -> Vec<f64> {
    let inv = |y: f64| {
        if y <= 0.0 {
            -limit
        } else {
            (y + (-(-y).exp_m1()).ln()).clamp(-limit, limit)
        }
    };
    match env.action_map {
        ActionMap::Softplus => powers.iter().map(|&p| inv(p)).collect(),
        ActionMap::Normalized => {
            let total: f64 = powers.iter().sum();
            let scale = powers.len() as f64 * std::f64::consts::LN_2 / total;
            powers.iter().map(|&p| inv(p * scale)).collect()
        }
    }
}
