use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, TrainConfig};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{Adam, NetInput, Network, StateFeatures};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub steps: usize,
    pub gradient_calls: u64,
    /// Mean SE of each training batch before its update.
    pub batch_se: Vec<f64>,
}

/// Powers chosen by a direct policy for each state.
pub fn policy_powers(policy: &Network, env: &Environment, states: &[&StateFeatures]) -> Result<Vec<Vec<f64>>> {
    let out = policy.forward(&NetInput::states_only(states.to_vec()))?;
    Ok(out.rows().into_iter().map(|r| env.powers(&r.to_vec())).collect())
}

/// Trains a network that maps the channel straight to raw power scores by
/// ascending the batch-mean SE. Training stops once `gradient_budget`
/// environment gradients have been spent.
pub fn train_direct_baseline(
    policy: &mut Network,
    data: &Dataset,
    env: &Environment,
    cfg: &TrainConfig,
    gradient_budget: u64,
) -> Result<BaselineReport> {
    data.require_nonempty()?;
    cfg.validate()?;
    if policy.arch().takes_extra() || policy.arch().time_dim() != 0 {
        return Err(Error::InvalidConfig("a direct policy takes the channel only".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.optimizer, policy.param_count());
    let states = data.features();
    let calls_before = env.gradient_calls();
    let mut spent = 0u64;
    let mut order: Vec<usize> = Vec::new();
    let mut report = BaselineReport { steps: 0, gradient_calls: 0, batch_se: Vec::new() };
    while spent < gradient_budget {
        if order.is_empty() {
            order = (0..data.len()).collect();
            order.shuffle(&mut rng);
        }
        optimizer.set_learning_rate(cfg.learning_rate_at(spent as f64 / gradient_budget as f64));
        let take = (cfg.batch_size as u64).min(gradient_budget - spent) as usize;
        let take = take.min(order.len());
        let batch: Vec<usize> = order.drain(order.len() - take..).collect();
        let input = NetInput::states_only(batch.iter().map(|&i| states[i]).collect());
        let (out, tape) = policy.forward_tape(&input)?;
        let b = batch.len() as f64;
        let mut d_out = Array2::zeros(out.dim());
        let mut se_sum = 0.0;
        for (r, &i) in batch.iter().enumerate() {
            let (se, g) = env.se_and_raw_gradient(&data.samples[i].channel, &out.row(r).to_vec())?;
            se_sum += se;
            for (d, gv) in d_out.row_mut(r).iter_mut().zip(g) {
                *d = -gv / b;
            }
        }
        let grads = policy.backward(&tape, d_out.view());
        optimizer.step(policy.params_mut(), &grads.params);
        spent += batch.len() as u64;
        report.steps += 1;
        report.batch_se.push(se_sum / b);
    }
    report.gradient_calls = env.gradient_calls() - calls_before;
    Ok(report)
}
