use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{Adam, NetInput, Network, OptimizerKind};

/// Observed SE of one action on one training state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTuple {
    pub index: usize,
    pub powers: Vec<f64>,
    pub se: f64,
}

/// Source of SE gradients for model-free action improvement.
pub trait Critic {
    /// Whether `fit` uses data; a perfect critic skips data collection.
    fn is_learned(&self) -> bool;

    fn fit(&mut self, samples: &[Sample], tuples: &[ValueTuple], steps: usize, rng: &mut ChaCha8Rng) -> Result<f64>;

    fn predict(&self, sample: &Sample, powers: &[f64]) -> Result<f64>;

    fn power_gradient(&self, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>>;

    fn gradient_calls(&self) -> u64;
}

/// Exact SE and gradient from the environment.
#[derive(Debug, Clone)]
pub struct PerfectCritic<'a> {
    pub env: &'a Environment,
}

impl Critic for PerfectCritic<'_> {
    fn is_learned(&self) -> bool {
        false
    }

    fn fit(&mut self, _: &[Sample], _: &[ValueTuple], _: usize, _: &mut ChaCha8Rng) -> Result<f64> {
        Ok(0.0)
    }

    fn predict(&self, sample: &Sample, powers: &[f64]) -> Result<f64> {
        self.env.se(&sample.channel, powers)
    }

    fn power_gradient(&self, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>> {
        self.env.se_gradient(&sample.channel, powers)
    }

    fn gradient_calls(&self) -> u64 {
        self.env.gradient_calls()
    }
}

const FIT_BATCH: usize = 128;

/// Learned SE estimate `offset + scale * sum(net(H, p / P))`. The affine
/// target scaling is fixed from the first batch of tuples it is fitted on.
#[derive(Debug)]
pub struct ValueNetwork {
    net: Network,
    optimizer: Adam,
    budget: f64,
    offset: f64,
    scale: f64,
    calibrated: bool,
    gradient_calls: AtomicU64,
}

impl ValueNetwork {
    pub fn new(net: Network, budget: f64, optimizer: OptimizerKind) -> Result<Self> {
        if !net.arch().takes_extra() || net.arch().time_dim() != 0 {
            return Err(Error::InvalidConfig("value network needs a power input and no step input".into()));
        }
        let n = net.param_count();
        Ok(Self {
            net,
            optimizer: Adam::new(optimizer, n),
            budget,
            offset: 0.0,
            scale: 1.0,
            calibrated: false,
            gradient_calls: AtomicU64::new(0),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn target_scaling(&self) -> (f64, f64) {
        (self.offset, self.scale)
    }

    fn input<'a>(&self, samples: &[&'a Sample], extra: &'a Array2<f64>) -> NetInput<'a> {
        NetInput { states: samples.iter().map(|s| &s.features).collect(), extra: Some(extra.view()), steps: None }
    }

    fn scaled_powers(&self, powers: &[&[f64]]) -> Array2<f64> {
        let k = powers.first().map_or(0, |p| p.len());
        Array2::from_shape_fn((powers.len(), k), |(i, j)| powers[i][j] / self.budget)
    }

    /// Batched estimates.
    pub fn predict_batch(&self, samples: &[&Sample], powers: &[&[f64]]) -> Result<Vec<f64>> {
        let extra = self.scaled_powers(powers);
        let out = self.net.forward(&self.input(samples, &extra))?;
        Ok(out.rows().into_iter().map(|r| self.offset + self.scale * r.sum()).collect())
    }
}

impl Critic for ValueNetwork {
    fn is_learned(&self) -> bool {
        true
    }

    /// Minibatch regression on `tuples`; returns the mean squared error of
    /// the last step in SE units.
    fn fit(&mut self, samples: &[Sample], tuples: &[ValueTuple], steps: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        if tuples.is_empty() {
            return Ok(0.0);
        }
        if !self.calibrated {
            let n = tuples.len() as f64;
            let mean = tuples.iter().map(|t| t.se).sum::<f64>() / n;
            let var = tuples.iter().map(|t| (t.se - mean).powi(2)).sum::<f64>() / n;
            let k = tuples[0].powers.len() as f64;
            self.offset = mean;
            // Outputs are summed over users.
            self.scale = var.sqrt().max(1e-3) / k.sqrt();
            self.calibrated = true;
        }
        let mut last = 0.0;
        for _ in 0..steps {
            let batch: Vec<&ValueTuple> =
                (0..FIT_BATCH.min(tuples.len())).map(|_| &tuples[rng.random_range(0..tuples.len())]).collect();
            let states: Vec<&Sample> = batch.iter().map(|t| &samples[t.index]).collect();
            let powers: Vec<&[f64]> = batch.iter().map(|t| t.powers.as_slice()).collect();
            let extra = self.scaled_powers(&powers);
            let (out, tape) = self.net.forward_tape(&self.input(&states, &extra))?;
            let b = batch.len() as f64;
            let mut d_out = Array2::zeros(out.dim());
            let mut loss = 0.0;
            for (r, t) in batch.iter().enumerate() {
                let pred = self.offset + self.scale * out.row(r).sum();
                let err = pred - t.se;
                loss += err * err / b;
                // Descends on the error measured in units of the target scale.
                let g = 2.0 * err / (self.scale * b);
                d_out.row_mut(r).fill(g);
            }
            let grads = self.net.backward(&tape, d_out.view());
            self.optimizer.step(self.net.params_mut(), &grads.params);
            last = loss;
        }
        Ok(last)
    }

    fn predict(&self, sample: &Sample, powers: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(&[sample], &[powers])?[0])
    }

    fn power_gradient(&self, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>> {
        self.gradient_calls.fetch_add(1, Ordering::Relaxed);
        let extra = self.scaled_powers(&[powers]);
        let (out, tape) = self.net.forward_tape(&self.input(&[sample], &extra))?;
        let d_out = Array2::from_elem(out.dim(), 1.0);
        let grads = self.net.backward(&tape, d_out.view());
        let g = grads.extra.expect("value network takes powers");
        Ok(g.row(0).iter().map(|v| v * self.scale / self.budget).collect())
    }

    fn gradient_calls(&self) -> u64 {
        self.gradient_calls.load(Ordering::Relaxed)
    }
}
